"""Turning b-sweeps into measured blow-up rates, fits and limit diagnostics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import AccuracyError, ContractError, InsufficientDataError
from .field import Field2D, GridSpec, field_integrals, refine_peak, resample, write_atomic
from .ground_state import RadialProfile, reference_ground_state, sample_field

REFERENCE_GRID = GridSpec(10.0, 201)
PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


# ---------------------------------------------------------------------------
# sweep records


@dataclass(frozen=True)
class SweepRow:
    b: float
    energy: float
    theta: float
    l4: float
    v_integral: float
    mu: float
    z_x: float
    z_y: float
    eps_meas: float
    eps_theory: float
    l2_dist: float
    h1_dist: float
    iters: int
    converged: bool
    resolution_ok: bool
    trial_energy: float = math.nan

    @property
    def z(self) -> tuple[float, float]:
        return (self.z_x, self.z_y)


COLUMNS = [f.name for f in fields(SweepRow)]


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    results: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        bs = [r.b for r in self.rows]
        if any(b2 >= b1 for b1, b2 in zip(bs, bs[1:])):
            raise ContractError("sweep rows must have strictly decreasing b")

    def column(self, name: str, usable_only: bool = False) -> np.ndarray:
        rows = self.usable() if usable_only else self.rows
        return np.array([getattr(r, name) for r in rows], dtype=float)

    def usable(self) -> list[SweepRow]:
        return [r for r in self.rows if r.converged and r.resolution_ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            out = []
            for name in COLUMNS:
                v = getattr(r, name)
                if isinstance(v, bool):
                    out.append("1" if v else "0")
                elif isinstance(v, int):
                    out.append(str(v))
                else:
                    out.append(format(float(v), ".17g"))
            w.writerow(out)
        return buf.getvalue()

    def save(self, path) -> None:
        write_atomic(Path(path), self.to_csv().encode())

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        reader = csv.DictReader(io.StringIO(text))
        missing = set(COLUMNS[:-1]) - set(reader.fieldnames or [])
        if missing:
            raise ContractError(f"sweep CSV lacks columns {sorted(missing)}")
        rows = []
        for rec in reader:
            kw = {}
            for f in fields(SweepRow):
                raw = rec.get(f.name)
                if raw is None or raw == "":
                    continue
                if f.name in ("converged", "resolution_ok"):
                    kw[f.name] = raw.strip().lower() in ("1", "true", "yes")
                elif f.name == "iters":
                    kw[f.name] = int(float(raw))
                else:
                    kw[f.name] = float(raw)
            rows.append(SweepRow(**kw))
        rows.sort(key=lambda r: -r.b)
        return cls(tuple(rows))

    @classmethod
    def load(cls, path) -> "SweepResult":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ContractError(f"cannot read sweep file {path}: {exc}") from exc
        return cls.from_csv(text)


def make_row(b, result, eps_theory, trial, profile=None, reference_grid=None) -> SweepRow:
    fi_theta = result.theta
    eps_meas = fi_theta ** -0.5 if fi_theta > 0 else math.nan
    try:
        m = measure_blowup(result, require_converged=False)
        z = m.z
    except ContractError:
        z = result.peak
    l2 = h1 = math.nan
    try:
        w = rescale_profile(result, reference_grid or REFERENCE_GRID)
        d = profile_distance(w, profile)
        l2, h1 = d.l2, d.h1
    except (AccuracyError, ContractError):
        pass
    scale = eps_theory if eps_theory is not None else eps_meas
    res_ok = bool(result.field.grid.h <= scale / 4) if math.isfinite(scale) else False
    return SweepRow(
        b=float(b),
        energy=result.energy,
        theta=result.theta,
        l4=result.l4,
        v_integral=result.v_integral,
        mu=result.mu,
        z_x=z[0],
        z_y=z[1],
        eps_meas=eps_meas,
        eps_theory=math.nan if eps_theory is None else float(eps_theory),
        l2_dist=l2,
        h1_dist=h1,
        iters=int(result.iterations),
        converged=bool(result.converged),
        resolution_ok=res_ok,
        trial_energy=math.nan if trial is None else float(trial.energy),
    )


# ---------------------------------------------------------------------------
# blow-up measurement and rescaling


@dataclass(frozen=True)
class BlowupMeasurement:
    eps_meas: float
    z: tuple[float, float]
    peak_value: float


def _as_field(obj, require_converged: bool) -> Field2D:
    if isinstance(obj, Field2D):
        return obj
    if require_converged and not obj.converged:
        raise ContractError(f"result is not converged (status {obj.status})")
    return obj.field


def measure_blowup(result, require_converged: bool = True) -> BlowupMeasurement:
    """eps_meas = θ^{-1/2} and the sub-grid peak location."""
    u = _as_field(result, require_converged)
    theta = field_integrals(u).theta
    if not theta > 0:
        raise ContractError("kinetic integral vanishes; no blow-up scale")
    z, pv = refine_peak(u)
    return BlowupMeasurement(theta ** -0.5, z, pv)


@dataclass(frozen=True)
class RescaledProfile:
    w: Field2D
    eps: float
    z: tuple[float, float]


def rescale_profile(result, reference_grid: GridSpec | None = None,
                    require_converged: bool = True) -> RescaledProfile:
    """w(x) = ε·u(εx + z) on the reference grid by bilinear interpolation."""
    ref = reference_grid or REFERENCE_GRID
    m = measure_blowup(result, require_converged)
    u = _as_field(result, require_converged)
    if u.grid.h > m.eps_meas / 2:
        raise AccuracyError(f"source spacing {u.grid.h:.3g} exceeds ε/2 = {m.eps_meas / 2:.3g}")
    src = resample(u, ref, center_src=m.z, center_dst=ref.center, zoom=m.eps_meas, order=1)
    return RescaledProfile(src.scaled(m.eps_meas), m.eps_meas, m.z)


@dataclass(frozen=True)
class ProfileDistance:
    l2: float
    h1: float


def profile_distance(w: RescaledProfile | Field2D, profile: RadialProfile | None = None,
                     a_star: float | None = None) -> ProfileDistance:
    """L² and H¹ distance of w to Q/√a* centred on the reference grid."""
    wf = w.w if isinstance(w, RescaledProfile) else w
    g = wf.grid
    if g.half_width < 10:
        raise ContractError("reference grid must cover radius 10")
    if profile is None:
        profile, consts = reference_ground_state()
        a_star = consts.a_star if a_star is None else a_star
    elif a_star is None:
        from .ground_state import ground_state_constants

        a_star = ground_state_constants(profile).a_star
    import warnings

    from .ground_state import TruncationWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        q = sample_field(profile, g, g.center, 1.0, a_star)
    diff = Field2D(g, wf.values - q.values)
    fi = field_integrals(diff)
    return ProfileDistance(math.sqrt(fi.mass), math.sqrt(fi.mass + fi.theta))


# ---------------------------------------------------------------------------
# power-law fits


MODES = ("supercritical_energy", "critical_energy", "epsilon")


@dataclass(frozen=True)
class FitResult:
    slope: float
    prefactor: float
    residual_rms: float
    n_points: int
    target_slope: float | None = None
    target_prefactor: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def fit_arrays(b, y) -> FitResult:
    """Least squares of log|y| on log b; prefactor = exp(intercept)."""
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(b) & np.isfinite(y) & (b > 0) & (y != 0)
    if ok.sum() < 3:
        raise InsufficientDataError(f"power-law fit needs at least 3 usable points, got {int(ok.sum())}")
    lb, ly = np.log(b[ok]), np.log(np.abs(y[ok]))
    A = np.column_stack([lb, np.ones_like(lb)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    rms = float(np.sqrt(np.mean((ly - A @ [slope, icpt]) ** 2)))
    return FitResult(float(slope), float(math.exp(icpt)), rms, int(ok.sum()))


def fit_power_law(sweep: SweepResult, mode: str, a: float | None = None, p: float | None = None,
                  lambda0: float | None = None) -> FitResult:
    """Fit |quantity| = prefactor · b^slope over converged, resolved rows.

    supercritical_energy fits |e| (targets -1 and ((a - a*)/a*)²/4);
    critical_energy fits e (targets p/(p+4) and the leading coefficient);
    epsilon fits eps_meas (targets 1/2, or 1/(p+4) when p is given).
    """
    from .limit_oracle import theory_energy_coefficient

    mode = mode.lower()
    if mode not in MODES:
        raise ContractError(f"unknown fit mode {mode!r}; expected one of {MODES}")
    rows = sweep.usable()
    b = [r.b for r in rows]
    s = reference_ground_state()[1].a_star
    ts = tp = None
    if mode == "supercritical_energy":
        y = [r.energy for r in rows]
        ts = -1.0
        if a is not None:
            tp = 0.25 * ((a - s) / s) ** 2
    elif mode == "critical_energy":
        y = [r.energy for r in rows]
        if p is not None:
            ts = p / (p + 4)
            if lambda0 is not None:
                tp = theory_energy_coefficient(p, lambda0, s)
    else:
        y = [r.eps_meas for r in rows]
        ts = 0.5 if p is None else 1.0 / (p + 4)
    fr = fit_arrays(b, y)
    return FitResult(fr.slope, fr.prefactor, fr.residual_rms, fr.n_points, ts, tp)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Check:
    name: str
    verdict: str
    measured: dict
    note: str = ""


@dataclass(frozen=True)
class DiagnosticsReport:
    checks: tuple[Check, ...]

    def verdict(self, name: str) -> str:
        for c in self.checks:
            if c.name == name:
                return c.verdict
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"checks": [asdict(c) for c in self.checks]}


def _monotone(x, increasing: bool, noise: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float)
    d = np.diff(x)
    if increasing:
        return bool(np.all(d >= -noise * np.abs(x[:-1])))
    return bool(np.all(d <= noise * np.abs(x[:-1])))


def decay_constant(w: Field2D, r_in: float = 4.0, r_out: float = 8.0) -> float:
    """max of w(x)·e^{|x|/2} over the annulus r_in ≤ |x - centre| ≤ r_out."""
    X, Y = w.grid.mesh
    r = np.hypot(X - w.grid.center[0], Y - w.grid.center[1])
    ann = (r >= r_in) & (r <= r_out)
    return float(np.max(np.abs(w.values[ann]) * np.exp(r[ann] / 2)))


def verify_limits(sweep: SweepResult, a: float, analysis=None, potential=None,
                  reference_grid: GridSpec | None = None) -> DiagnosticsReport:
    """PASS/FAIL/INCONCLUSIVE verdicts on the finite-b trends of a sweep."""
    from .limit_oracle import e_bar_closed, r_b, regime

    if not sweep.rows:
        raise ContractError("empty sweep")
    s = reference_ground_state()[1].a_star
    reg = regime(a, s)
    use = sweep.usable()
    checks = []

    # (i) supercritical kinetic and quartic levels
    if reg != "supercritical":
        checks.append(Check("supercritical_levels", INCONCLUSIVE, {}, "not applicable for a ≤ a*"))
    elif not use:
        checks.append(Check("supercritical_levels", INCONCLUSIVE, {}, "no resolved rows"))
    else:
        last = use[-1]
        rb = r_b(a, last.b, s)
        th, q = last.theta / rb, last.l4 * s / (2 * rb)
        ok = abs(th - 1) <= 0.05 and abs(q - 1) <= 0.05
        checks.append(Check("supercritical_levels", PASS if ok else FAIL,
                            {"b": last.b, "theta_over_rb": th, "l4_over_2rb_per_astar": q}))

    # (ii) critical trends
    if reg != "critical":
        checks.append(Check("critical_trends", INCONCLUSIVE, {}, "not applicable for a ≠ a*"))
    elif len(use) < 2:
        checks.append(Check("critical_trends", INCONCLUSIVE, {}, "fewer than 2 resolved rows"))
    else:
        e = [r.energy for r in use]
        th = [r.theta for r in use]
        kir = [r.b * r.theta ** 2 for r in use]
        vi = [r.v_integral for r in use]
        ok = (all(x > 0 for x in e) and _monotone(e, False) and _monotone(th, True)
              and _monotone(kir, False) and _monotone(vi, False))
        checks.append(Check("critical_trends", PASS if ok else FAIL,
                            {"energy": e, "theta": th, "b_theta_sq": kir, "v_integral": vi}))

    # (iii) multiplier scaling μ ε² → -a/a*
    if reg == "subcritical" or not use:
        checks.append(Check("multiplier_scaling", INCONCLUSIVE, {}, "no resolved rows or a < a*"))
    else:
        vals = [r.mu * r.eps_meas ** 2 for r in use]
        target = -a / s
        dev = abs(vals[-1] / target - 1)
        checks.append(Check("multiplier_scaling", PASS if dev <= 0.1 else FAIL,
                            {"mu_eps_sq": vals, "target": target, "relative_deviation": dev}))

    # (iv) concentration point: which well, then the drift inside it
    if analysis is None:
        checks.append(Check("peak_well", INCONCLUSIVE, {}, "no well analysis supplied"))
        checks.append(Check("peak_drift", INCONCLUSIVE, {}, "no well analysis supplied"))
    elif not use:
        checks.append(Check("peak_well", INCONCLUSIVE, {}, "no resolved rows"))
        checks.append(Check("peak_drift", INCONCLUSIVE, {}, "no resolved rows"))
    else:
        locs = np.array(analysis.locations)
        nearest = [int(np.argmin(np.hypot(*(locs - np.array(r.z)).T))) for r in use]
        tail = nearest[-2:]
        in_z0 = all(k in analysis.z0 for k in tail)
        checks.append(Check("peak_well", PASS if in_z0 else FAIL,
                            {"nearest_wells": nearest, "z0": list(analysis.z0)}))
        errs, drifts = [], []
        for r, k in zip(use, nearest):
            y0 = np.array(analysis.wells[k].y_star)
            drift = (np.array(r.z) - locs[k]) / r.eps_theory
            drifts.append(drift.tolist())
            errs.append(float(np.linalg.norm(drift - y0)))
        tol = 0.1 * max(1.0, float(np.linalg.norm(analysis.wells[nearest[-1]].y_star)))
        if not in_z0:
            verdict, note = FAIL, "peak not at a flattest well"
        elif errs[-1] <= tol:
            verdict, note = PASS, ""
        elif len(errs) >= 2 and _monotone(errs, False):
            verdict, note = INCONCLUSIVE, "drift shrinking along the sweep but not yet within tolerance"
        else:
            verdict, note = FAIL, ""
        checks.append(Check("peak_drift", verdict, {"drift": drifts, "drift_error": errs, "tolerance": tol}, note))

    # (v) uniform exponential decay of the rescaled profiles
    results = [res for res, row in zip(sweep.results, sweep.rows) if row.converged and row.resolution_ok]
    if len(results) < 2:
        checks.append(Check("rescaled_decay", INCONCLUSIVE, {}, "needs fields from at least 2 resolved rows"))
    else:
        cs = []
        for res in results:
            try:
                cs.append(decay_constant(rescale_profile(res, reference_grid).w))
            except (AccuracyError, ContractError):
                cs.append(math.nan)
        ok = all(math.isfinite(c) and c > 0 for c in cs) and max(cs) <= 2 * min(cs)
        checks.append(Check("rescaled_decay", PASS if ok else FAIL, {"C": cs}))

    # energy sandwich and gap law
    if reg == "subcritical" or not use:
        checks.append(Check("energy_sandwich", INCONCLUSIVE, {}, "no resolved rows or a < a*"))
    else:
        lo_ok, hi_ok, rec = True, True, []
        for r in use:
            eb = e_bar_closed(a, r.b, s)
            lo = eb - 0.005 * abs(eb) if eb != 0 else -0.005 * abs(r.energy)
            hi = r.trial_energy + 1e-9 if math.isfinite(r.trial_energy) else math.inf
            lo_ok &= r.energy >= lo
            hi_ok &= r.energy <= hi
            rec.append({"b": r.b, "e_bar": eb, "energy": r.energy, "trial": r.trial_energy})
        checks.append(Check("energy_sandwich", PASS if lo_ok and hi_ok else FAIL, {"rows": rec}))
    if reg != "supercritical" or analysis is None or not use:
        checks.append(Check("gap_law", INCONCLUSIVE, {}, "needs a > a*, a potential and resolved rows"))
    else:
        last = use[-1]
        gap = (last.energy - e_bar_closed(a, last.b, s)) / last.eps_theory ** analysis.p
        target = analysis.lambda0 / (2 * s)
        dev = abs(gap / target - 1)
        checks.append(Check("gap_law", PASS if dev <= 0.2 else FAIL,
                            {"b": last.b, "normalized_gap": gap, "target": target, "relative_deviation": dev}))
    return DiagnosticsReport(tuple(checks))


# ---------------------------------------------------------------------------
# uniqueness


@dataclass(frozen=True)
class ProbeResult:
    verdict: str
    energy_spread: float
    peak_spread: float
    h: float
    n_converged: int


def uniqueness_probe(problem, b: float, config, n_starts: int, seed: int = 0, analysis=None,
                     jobs: int = 1) -> ProbeResult:
    """Multi-start at one b; UNIQUE when converged runs agree in energy (1e-6) and peak (one h)."""
    from dataclasses import replace

    from .minimizer import multi_start

    if int(n_starts) != n_starts or n_starts < 2:
        raise ContractError(f"uniqueness probe needs n_starts ≥ 2, got {n_starts}")
    if not b > 0:
        raise ContractError(f"b must be positive, got {b}")
    h = config.grid.h
    if problem.potential is not None:
        if analysis is None:
            from .potential import analyze_wells

            analysis = analyze_wells(problem.potential, reference_ground_state()[0])
        if len(analysis.z0) != 1:
            return ProbeResult("NOT_APPLICABLE", math.nan, math.nan, h, 0)
    ms = multi_start(replace(problem, b=b), config, n_starts, seed, jobs)
    n_ok = sum(r.converged for r in ms.all)
    unique = ms.energy_spread <= 1e-6 and ms.peak_spread <= h * (1 + 1e-9)
    return ProbeResult("UNIQUE" if unique else "SPLIT", ms.energy_spread, ms.peak_spread, h, n_ok)
