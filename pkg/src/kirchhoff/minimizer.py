"""Preconditioned descent for the mass-constrained Kirchhoff energy.

One step freezes θ and the shift σ = max(-μ, 0), and applies the
preconditioner A = I + dt·((1 + bθ)(-Δ_h) + V + σ) to the gradient g and to
the iterate u.  The multiplier m = ⟨A⁻¹g, u⟩/⟨A⁻¹u, u⟩ makes the step
dt·(A⁻¹g - m·A⁻¹u) tangent to the unit sphere to first order.  It is combined
with the previous direction by a preconditioned Polak-Ribière rule, and the
step length is the better of 1 and the minimizer of a quadratic energy model.
The renormalized iterate is accepted only if the energy did not increase;
otherwise dt is halved and the momentum reset.  Without a potential A is
inverted exactly by the sine transform; with one, by conjugate gradients
preconditioned with a constant-potential operator.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dstn, idstn

from .errors import ContractError, NumericalError
from .field import (
    EnergyBreakdown,
    Field2D,
    GridSpec,
    laplacian_symbol,
    neg_laplacian_interior,
    normalize,
    potential_values,
    refine_peak,
    resample,
)

logger = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
NOT_CONVERGED = "NOT_CONVERGED"
BLOWUP_DETECTED = "BLOWUP_DETECTED"
# θh² above this means the state is concentrating on the lattice scale
LATTICE_THETA = 0.25
NONNEG_FLOOR = -1e-12


class BlowupDetected(NumericalError):
    """The kinetic integral ran past the divergence guard."""


class NotConverged(NumericalError):
    """The flow stopped before meeting its tolerances."""


@dataclass(frozen=True)
class Problem:
    a: float
    b: float
    potential: object = None

    def __post_init__(self):
        if not (self.a >= 0 and self.b >= 0):
            raise ContractError(f"need a ≥ 0 and b ≥ 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class InitSpec:
    """Starting state: ``gaussian`` (center, sigma), ``field`` (a Field2D), or ``random`` (seed)."""

    kind: str = "gaussian"
    center: tuple[float, float] | None = None
    sigma: float | None = None
    field: Field2D | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "field", "random"):
            raise ContractError(f"unknown init kind {self.kind!r}")
        if self.kind == "field" and self.field is None:
            raise ContractError("field init needs a field")
        if self.kind == "random" and self.seed is None:
            raise ContractError("random init needs a seed")
        if self.sigma is not None and not self.sigma > 0:
            raise ContractError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def gaussian(cls, center=None, sigma=None) -> "InitSpec":
        return cls("gaussian", None if center is None else (float(center[0]), float(center[1])), sigma)

    @classmethod
    def from_field(cls, u: Field2D) -> "InitSpec":
        return cls("field", field=u)

    @classmethod
    def random(cls, seed: int) -> "InitSpec":
        return cls("random", seed=int(seed))

    def build(self, grid: GridSpec) -> Field2D:
        X, Y = grid.mesh
        L = grid.half_width
        if self.kind == "field":
            src = self.field
            u = src if src.grid == grid else resample(src, grid, order=3)
            vals = np.abs(u.values)
        elif self.kind == "gaussian":
            c = grid.center if self.center is None else self.center
            s = L / 6 if self.sigma is None else self.sigma
            vals = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * s * s))
        else:
            rng = np.random.default_rng(self.seed)
            c = np.asarray(grid.center) + rng.uniform(-0.5 * L, 0.5 * L, size=2)
            s = rng.uniform(L / 16, L / 6)
            vals = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * s * s))
            # smooth multiplicative ripple from a few random low modes
            ripple = np.zeros_like(X)
            for _ in range(4):
                kx, ky = rng.normal(scale=2.0 / L, size=2)
                ripple += np.cos(kx * X + ky * Y + rng.uniform(0, 2 * np.pi))
            vals = np.abs(vals * (1.0 + 0.05 * ripple))
        vals = np.array(vals, dtype=float)
        vals[0, :] = vals[-1, :] = vals[:, 0] = vals[:, -1] = 0.0
        u = Field2D(grid, vals)
        if not np.any(u.interior):
            raise ContractError("initial state vanishes on the grid")
        return normalize(u)

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.center is not None:
            d["center"] = list(self.center)
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.seed is not None:
            d["seed"] = self.seed
        return d


@dataclass(frozen=True)
class MinimizeConfig:
    grid: GridSpec
    dt: float = 1e-2
    tol_energy: float = 1e-10
    tol_residual: float = 1e-6
    max_iter: int = 5000
    init: InitSpec = field(default_factory=InitSpec)
    theta_max: float = 1e4
    dt_min: float = 1e-12
    dt_max: float = 1e6
    cg_tol: float = 1e-10
    cg_maxiter: int = 500
    rescale: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if not (self.tol_energy > 0 and self.tol_residual > 0):
            raise ContractError("tolerances must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ContractError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not self.theta_max > 0:
            raise ContractError("theta_max must be positive")
        if self.rescale is not None and not self.rescale > 0:
            raise ContractError("rescale half-width must be positive")


@dataclass(frozen=True, eq=False)
class MinimizerResult:
    field: Field2D
    breakdown: EnergyBreakdown
    mu: float
    iterations: int
    status: str
    residual: float
    energy_change: float
    peak: tuple[float, float]
    peak_value: float
    theta: float
    l4: float
    v_integral: float
    log: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def energy(self) -> float:
        return self.breakdown.total

    @property
    def nonnegative(self) -> bool:
        return float(self.field.values.min()) >= NONNEG_FLOOR

    def raise_for_status(self) -> "MinimizerResult":
        if self.status == BLOWUP_DETECTED:
            raise BlowupDetected(f"divergence guard tripped after {self.iterations} iterations (θ={self.theta:.4g})")
        if self.status == NOT_CONVERGED:
            raise NotConverged(f"not converged after {self.iterations} iterations (residual {self.residual:.3e})")
        return self

    def summary(self) -> dict:
        return {
            "status": self.status,
            "energy": self.breakdown.total,
            "breakdown": self.breakdown.as_dict(),
            "mu": self.mu,
            "theta": self.theta,
            "l4": self.l4,
            "v_integral": self.v_integral,
            "iterations": self.iterations,
            "residual": self.residual,
            "energy_change": self.energy_change,
            "peak": list(self.peak),
            "peak_value": self.peak_value,
        }


# ---------------------------------------------------------------------------
# linear algebra


def _dst_solve(rhs: np.ndarray, diag: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    return idstn(dstn(rhs, type=1, axes=axes) / diag, type=1, axes=axes)


def _pcg(apply_A, precond, rhs: np.ndarray, x0: np.ndarray, tol: float, maxiter: int) -> tuple[np.ndarray, int]:
    """Preconditioned CG on a stack of right-hand sides along axis 0."""
    def dot(p, q):
        return np.einsum("kij,kij->k", p, q)[:, None, None]

    x = x0.copy()
    r = rhs - apply_A(x)
    bnorm = np.sqrt(dot(rhs, rhs))
    bnorm[bnorm == 0] = 1.0
    z = precond(r)
    p = z.copy()
    rz = dot(r, z)
    for it in range(1, maxiter + 1):
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        alpha = np.where(pAp > 0, rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        x += alpha * p
        r -= alpha * Ap
        if np.all(np.sqrt(dot(r, r)) <= tol * bnorm):
            return x, it
        z = precond(r)
        rz_new = dot(r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
    logger.debug("PCG stopped at maxiter=%d", maxiter)
    return x, maxiter


class _Flow:
    def __init__(self, problem: Problem, config: MinimizeConfig):
        self.p = problem
        self.c = config
        g = config.grid
        self.grid = g
        self.h = g.h
        self.w = g.h ** 2
        self.S = laplacian_symbol(g.n, g.h, g.stencil)
        V = potential_values(problem.potential, g)
        self.V = None if V is None else np.ascontiguousarray(V[1:-1, 1:-1])
        self.vbar = 0.0
        self.cg_iters = 0

    def K(self, u):
        return neg_laplacian_interior(u, self.h, self.grid.stencil)

    def state(self, u):
        Ku = self.K(u)
        w = self.w
        theta = w * float(np.sum(u * Ku))
        u2 = u * u
        l4 = w * float(np.sum(u2 * u2))
        vint = 0.0 if self.V is None else w * float(np.sum(self.V * u2))
        a, b = self.p.a, self.p.b
        parts = (0.5 * theta, 0.5 * vint, 0.25 * b * theta * theta, -0.25 * a * l4)
        return sum(parts), parts, theta, l4, vint, Ku

    def solve(self, rhs, dt, coef, shift):
        """A⁻¹ rhs for A = I + dt(coef·K + V + shift), rhs stacked on axis 0."""
        if self.V is None:
            return _dst_solve(rhs, 1.0 + dt * (coef * self.S + shift))
        diag = 1.0 + dt * (coef * self.S + self.vbar + shift)
        V = self.V

        def apply_A(x):
            return x + dt * (coef * self.K(x) + (V + shift) * x)

        x0 = _dst_solve(rhs, diag)
        x, n = _pcg(apply_A, lambda r: _dst_solve(r, diag), rhs, x0, self.c.cg_tol, self.c.cg_maxiter)
        self.cg_iters += n
        return x


def _line_search(flow, u, d, E, slope):
    """Best of the unit step and the minimizer of the quadratic through E(0), E'(0), E(1)."""
    if not slope < 0:
        return None

    def at(alpha):
        un = u + alpha * d
        un /= math.sqrt(flow.w * float(np.sum(un * un)))
        return flow.state(un) + (un, alpha)

    best = at(1.0)
    curv = best[0] - E - slope
    alpha = -slope / (2 * curv) if curv > 0 else 4.0
    alpha = min(max(alpha, 0.05), 20.0)
    if abs(alpha - 1.0) > 0.1:
        other = at(alpha)
        if other[0] < best[0]:
            best = other
    return best


def _peak(u: Field2D) -> tuple[tuple[float, float], float]:
    i, j = np.unravel_index(int(np.argmax(u.values)), u.values.shape)
    return (float(u.grid.x[i]), float(u.grid.y[j])), float(u.values[i, j])


def minimize(problem: Problem, config: MinimizeConfig) -> MinimizerResult:
    flow = _Flow(problem, config)
    a, b, w = problem.a, problem.b, flow.w
    u0 = config.init.build(config.grid)
    u = np.array(u0.interior)
    E, parts, theta, l4, vint, Ku = flow.state(u)
    dt = config.dt
    dE = math.inf
    log = []
    status = NOT_CONVERGED
    it = 0
    res = math.inf
    mu = math.nan
    d_prev = r_prev = z_prev = None
    while True:
        coef = 1.0 + b * theta
        g = coef * Ku - a * u ** 3
        if flow.V is not None:
            g += flow.V * u
        mu = w * float(np.sum(g * u))
        rvec = g - mu * u
        res = math.sqrt(w * float(np.sum(rvec * rvec)))
        log.append((it, E, res, dt, theta))
        if theta > config.theta_max or theta * w > LATTICE_THETA:
            status = BLOWUP_DETECTED
            break
        if res <= config.tol_residual * max(1.0, abs(mu)) and abs(dE) <= config.tol_energy * max(abs(E), 1e-300):
            status = CONVERGED
            break
        if it >= config.max_iter:
            break
        shift = max(-mu, 0.0)
        flow.vbar = vint
        stack = np.stack([g, u])
        scale = abs(parts[0]) + abs(parts[1]) + abs(parts[2]) + abs(parts[3])
        accepted = False
        while dt >= config.dt_min:
            pg, pu = flow.solve(stack, dt, coef, shift)
            m = float(np.sum(pg * u)) / float(np.sum(pu * u))
            z = dt * (pg - m * pu)
            d = -z
            if d_prev is not None:
                beta = float(np.sum(z * (rvec - r_prev))) / float(np.sum(z_prev * r_prev))
                if beta > 0:
                    dp = d_prev - (w * float(np.sum(d_prev * u))) * u
                    cand = d + beta * dp
                    if float(np.sum(rvec * cand)) < 0:
                        d = cand
            slope = w * float(np.sum(rvec * d))
            trial = _line_search(flow, u, d, E, slope)
            if trial is not None and trial[0] <= E + 1e-13 * scale:
                accepted = True
                break
            dt *= 0.5
            d_prev = None
        if not accepted:
            logger.debug("step size underflow at iteration %d", it)
            break
        En, pn, thn, l4n, vn, Kun, un, alpha = trial
        dE = En - E
        d_prev, r_prev, z_prev = alpha * d, rvec, z
        u, E, parts, theta, l4, vint, Ku = un, En, pn, thn, l4n, vn, Kun
        dt = min(dt * 1.5, config.dt_max)
        it += 1
    field_out = Field2D.from_interior(config.grid, u)
    peak, peak_value = _peak(field_out)
    bd = EnergyBreakdown(parts[0], parts[1], parts[2], parts[3], E)
    return MinimizerResult(
        field=field_out,
        breakdown=bd,
        mu=mu,
        iterations=it,
        status=status,
        residual=res,
        energy_change=dE,
        peak=peak,
        peak_value=peak_value,
        theta=theta,
        l4=l4,
        v_integral=vint,
        log=np.array(log, dtype=float).reshape(-1, 5),
    )


# ---------------------------------------------------------------------------
# multi-start


@dataclass(frozen=True)
class MultiStartResult:
    best: MinimizerResult
    all: tuple[MinimizerResult, ...]
    energy_spread: float
    peak_spread: float


def _run_one(args):
    problem, config = args
    return minimize(problem, config)


def _map(fn, items, jobs: int):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def start_configs(config: MinimizeConfig, n_starts: int, seed: int) -> list[MinimizeConfig]:
    """The configured start first, then random starts seeded from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_starts - 1)
    out = [config]
    out += [replace(config, init=InitSpec.random(int(s))) for s in seeds]
    return out


def multi_start(problem: Problem, config: MinimizeConfig, n_starts: int, seed: int = 0,
                jobs: int = 1) -> MultiStartResult:
    if int(n_starts) != n_starts or n_starts < 2:
        raise ContractError(f"multi_start needs n_starts ≥ 2, got {n_starts}")
    configs = start_configs(config, int(n_starts), seed)
    results = _map(_run_one, [(problem, c) for c in configs], jobs)
    ok = [r for r in results if r.converged]
    if not ok:
        raise NotConverged(f"none of {n_starts} starts converged")
    energies = np.array([r.energy for r in ok])
    best = ok[int(np.argmin(energies))]
    e_spread = float((energies.max() - energies.min()) / max(abs(energies.min()), 1e-300))
    # sub-grid peaks: symmetric minimizers can tie between neighbouring nodes
    peaks = np.array([refine_peak(r.field)[0] for r in ok])
    diff = peaks[:, None, :] - peaks[None, :, :]
    p_spread = float(np.sqrt((diff ** 2).sum(-1)).max())
    return MultiStartResult(best, tuple(results), e_spread, p_spread)


# ---------------------------------------------------------------------------
# continuation in b


def warm_start(prev: MinimizerResult, grid: GridSpec, ratio: float) -> Field2D:
    """Previous minimizer shrunk by ``ratio`` about its peak, resampled onto ``grid``."""
    u = resample(prev.field, grid, center_src=prev.peak, center_dst=prev.peak, zoom=1.0 / ratio, order=3)
    vals = np.abs(u.values)
    if not np.any(vals):
        raise ContractError("warm start does not overlap the new grid")
    return normalize(Field2D(grid, vals))


def sweep_b(problem: Problem, b_list, config: MinimizeConfig, analysis=None, profile=None,
            reference_grid: GridSpec | None = None):
    """Minimize along decreasing b with warm starts; see ``asymptotics.SweepResult``.

    With ``config.rescale = L̃`` each grid has half-width L̃·ε_theory(b) and is
    centred on the previous peak (or on the configured grid centre at the start).
    """
    from . import asymptotics
    from .ground_state import reference_ground_state
    from .limit_oracle import regime, theory_epsilon, trial_upper_bound

    bs = [float(b) for b in b_list]
    if not bs or any(b <= 0 for b in bs) or any(b2 >= b1 for b1, b2 in zip(bs, bs[1:])):
        raise ContractError("b_list must be non-empty, positive and strictly decreasing")
    if profile is None:
        profile = reference_ground_state()[0]
    a, V = problem.a, problem.potential
    reg = regime(a)
    if V is not None and analysis is None and reg == "critical":
        from .potential import analyze_wells

        analysis = analyze_wells(V, profile)
    rows, results = [], []
    prev = None
    prev_eps = None
    for b in bs:
        if reg == "critical":
            eps_t = theory_epsilon(a, b, analysis.p, analysis.lambda0) if analysis is not None else None
        else:
            eps_t = theory_epsilon(a, b)
        grid = config.grid
        if config.rescale is not None:
            if eps_t is None:
                raise ContractError("rescaled grids need a theoretical blow-up scale")
            center = grid.center if prev is None else prev.peak
            grid = grid.with_(half_width=config.rescale * eps_t, center=center)
        init = config.init
        if prev is not None:
            ratio = (eps_t / prev_eps) if (eps_t is not None and prev_eps is not None) else 1.0
            init = InitSpec.from_field(warm_start(prev, grid, ratio))
        cfg = replace(config, grid=grid, init=init)
        p_b = replace(problem, b=b)
        res = minimize(p_b, cfg)
        try:
            trial = trial_upper_bound(a, b, V, grid, profile, analysis)
        except ContractError as exc:
            logger.warning("b=%g: no trial state on this grid (%s)", b, exc)
            trial = None
        if trial is not None and res.status != BLOWUP_DETECTED and res.energy > trial.energy + 1e-9:
            # the continuation left the branch the trial state sits on; restart there
            alt = minimize(p_b, replace(cfg, init=InitSpec.from_field(trial.field)))
            logger.info("b=%g: restart from trial state, energy %.12g -> %.12g", b, res.energy, alt.energy)
            if alt.status != BLOWUP_DETECTED and alt.energy < res.energy:
                res = alt
        row = asymptotics.make_row(b, res, eps_t, trial, profile, reference_grid)
        rows.append(row)
        results.append(res)
        if res.status == BLOWUP_DETECTED:
            logger.warning("b=%g: divergence guard tripped; remaining b values skipped", b)
            break
        if not row.resolution_ok:
            logger.warning("b=%g: grid spacing %.3g exceeds ε/4", b, grid.h)
        prev, prev_eps = res, eps_t
    return asymptotics.SweepResult(tuple(rows), tuple(results))
