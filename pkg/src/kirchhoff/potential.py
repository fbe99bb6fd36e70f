"""Multi-well trapping potentials with homogeneous local models.

A well is a location x_i, a degree p_i and a homogeneous shape m_i.  The
``product`` composition sets V(x) = Π_i m_i(x - x_i); near x_i it behaves
like c_i·m_i(x - x_i) with c_i = Π_{j≠i} m_j(x_i - x_j), and that rescaled
model is what enters H_i(y) = ∫V_i(x + y)Q²(x)dx.  The ``single``
composition is one well with c_1 = 1.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .errors import AccuracyError, ConfigurationError, ContractError

logger = logging.getLogger(__name__)

MODELS = ("isotropic", "anisotropic", "dihedral")
COMPOSITIONS = ("product", "single")
H_BOX = 14.0
H_STEP = 0.05
MAX_DEGREE = 8.0
TIE_TOL = 1e-6
SEED_SPAN = 3.0


@dataclass(frozen=True)
class WellSpec:
    """One zero of V.  ``params``: isotropic {c}; anisotropic {c1, c2}; dihedral {c, kappa, k}."""

    location: tuple[float, float]
    degree: float
    model: str = "isotropic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))
        object.__setattr__(self, "degree", float(self.degree))
        if self.model not in MODELS:
            raise ContractError(f"unknown local model {self.model!r}; expected one of {MODELS}")
        if not self.degree > 0:
            raise ContractError(f"degree must be positive, got {self.degree}")
        p = dict(self.params)
        if self.model == "isotropic":
            p.setdefault("c", 1.0)
            keys = ("c",)
        elif self.model == "anisotropic":
            if self.degree != 2:
                raise ContractError("anisotropic quadratic wells have degree 2")
            p.setdefault("c1", 1.0)
            p.setdefault("c2", 1.0)
            keys = ("c1", "c2")
        else:
            p.setdefault("c", 1.0)
            p.setdefault("kappa", 0.0)
            p.setdefault("k", 4)
            keys = ("c",)
            if not abs(p["kappa"]) < 1:
                raise ContractError(f"dihedral well needs |kappa| < 1, got {p['kappa']}")
            if int(p["k"]) != p["k"] or p["k"] < 1:
                raise ContractError(f"dihedral order k must be a positive integer, got {p['k']}")
            p["k"] = int(p["k"])
        for key in keys:
            if not p[key] > 0:
                raise ContractError(f"well parameter {key} must be positive, got {p[key]}")
        unknown = set(p) - {"c", "c1", "c2", "kappa", "k"}
        if unknown:
            raise ContractError(f"unexpected well parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {k: float(v) if k != "k" else v for k, v in p.items()})

    def local(self, dx, dy, scale: float = 1.0):
        """Homogeneous model m(dx, dy), times ``scale``."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        p = self.params
        if self.model == "anisotropic":
            return scale * (p["c1"] * dx * dx + p["c2"] * dy * dy)
        r2 = dx * dx + dy * dy
        rp = r2 if self.degree == 2 else r2 ** (0.5 * self.degree)
        if self.model == "isotropic":
            return scale * p["c"] * rp
        phi = np.arctan2(dy, dx)
        return scale * p["c"] * rp * (1.0 + p["kappa"] * np.cos(p["k"] * phi))

    def local_gradient(self, dx, dy, scale: float = 1.0):
        return self.local_with_gradient(dx, dy, scale)[1:]

    def local_with_gradient(self, dx, dy, scale: float = 1.0):
        """(m, ∂m/∂x, ∂m/∂y) in one pass, times ``scale``."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        p = self.params
        if self.model == "anisotropic":
            c1, c2 = scale * p["c1"], scale * p["c2"]
            return c1 * dx * dx + c2 * dy * dy, 2 * c1 * dx, 2 * c2 * dy
        deg = self.degree
        c = scale * p["c"]
        r2 = dx * dx + dy * dy
        with np.errstate(divide="ignore", invalid="ignore"):
            # r^(p-2), zero at the origin (p > 0 keeps the gradient finite there)
            rq = np.where(r2 > 0, r2 ** (0.5 * deg - 1.0), 0.0)
        rp = rq * r2
        if self.model == "isotropic":
            return c * rp, c * deg * rq * dx, c * deg * rq * dy
        kap, k = p["kappa"], p["k"]
        # e^{ikφ} = ((dx + i·dy)/r)^k avoids arctan2 and the trig calls
        with np.errstate(divide="ignore", invalid="ignore"):
            zk = np.where(r2 > 0, ((dx + 1j * dy) / np.sqrt(r2)) ** k, 1.0)
        ang = 1.0 + kap * zk.real
        dang = -kap * k * zk.imag
        gx = deg * rq * dx * ang - rq * dang * dy
        gy = deg * rq * dy * ang + rq * dang * dx
        return c * rp * ang, c * gx, c * gy

    def as_dict(self) -> dict:
        return {"x": list(self.location), "p": self.degree, "model": self.model, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "WellSpec":
        return cls(tuple(d["x"]), float(d["p"]), d.get("model", "isotropic"), dict(d.get("params", {})))


@dataclass(frozen=True)
class PotentialSpec:
    wells: tuple[WellSpec, ...]
    composition: str = "product"
    envelope: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(self.wells))
        if not self.wells:
            raise ContractError("a potential needs at least one well")
        if self.composition not in COMPOSITIONS:
            raise ContractError(f"unknown composition {self.composition!r}")
        if self.composition == "single" and len(self.wells) != 1:
            raise ContractError("single composition takes exactly one well")
        locs = [w.location for w in self.wells]
        if len(set(locs)) != len(locs):
            raise ContractError("well locations must be distinct")
        C, beta = self.envelope
        if not (C > 0 and beta > 0):
            raise ContractError(f"envelope (C, beta) must be positive, got {self.envelope}")
        object.__setattr__(self, "envelope", (float(C), float(beta)))

    def evaluate(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.ones(np.broadcast(x, y).shape)
        for w in self.wells:
            out = out * w.local(x - w.location[0], y - w.location[1])
        return out

    def local_scale(self, i: int) -> float:
        """c_i such that V(x_i + x)/(c_i·m_i(x)) → 1 as x → 0."""
        xi = self.wells[i].location
        c = 1.0
        for j, w in enumerate(self.wells):
            if j != i:
                c *= float(w.local(xi[0] - w.location[0], xi[1] - w.location[1]))
        return c

    def growth_ratio(self, radius: float, n_rays: int = 16) -> float:
        """max over rays of V(x)/(C·e^{β|x|}) at |x| = radius."""
        C, beta = self.envelope
        t = np.linspace(0, 2 * np.pi, n_rays, endpoint=False)
        v = self.evaluate(radius * np.cos(t), radius * np.sin(t))
        return float(np.max(v) / (C * math.exp(min(beta * radius, 700.0))))

    def as_dict(self) -> dict:
        return {"composition": self.composition, "wells": [w.as_dict() for w in self.wells],
                "envelope": {"C": self.envelope[0], "beta": self.envelope[1]}}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        try:
            env = d.get("envelope", {"C": 1.0, "beta": 1.0})
            return cls(tuple(WellSpec.from_dict(w) for w in d["wells"]), d.get("composition", "product"),
                       (float(env["C"]), float(env["beta"])))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed potential description: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PotentialSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read potential file {path}: {exc}") from exc

    @classmethod
    def harmonic(cls, c: float = 1.0) -> "PotentialSpec":
        """V(x) = c|x|²."""
        return cls((WellSpec((0.0, 0.0), 2.0, "isotropic", {"c": c}),), "single")


def eval_potential(spec: PotentialSpec, x) -> float:
    return float(spec.evaluate(x[0], x[1]))


# ---------------------------------------------------------------------------
# H_i and well selection


class _QuadratureQ2:
    """Q² on the tensor box [-14, 14]² plus a polar ring covering the rest out to r = 24."""

    def __init__(self, profile, step: float = H_STEP):
        m = int(round(2 * H_BOX / step)) + 1
        s = np.linspace(-H_BOX, H_BOX, m)
        hs = s[1] - s[0]
        wt = np.full(m, hs)
        wt[0] = wt[-1] = hs / 2
        X, Y = np.meshgrid(s, s, indexing="ij")
        self.X, self.Y = X, Y
        self.W = np.outer(wt, wt) * profile(np.hypot(X, Y)) ** 2
        r = np.linspace(H_BOX, 24.0, 201)
        t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
        R, T = np.meshgrid(r, t, indexing="ij")
        Xr, Yr = R * np.cos(T), R * np.sin(T)
        outside = np.maximum(np.abs(Xr), np.abs(Yr)) > H_BOX
        wr = np.full(r.size, r[1] - r[0])
        wr[0] = wr[-1] = wr[0] / 2
        Wr = (wr[:, None] * R) * (2 * np.pi / t.size) * profile(R) ** 2 * outside
        keep = Wr > 0
        self.Xr, self.Yr, self.Wr = Xr[keep], Yr[keep], Wr[keep]

    def integrate(self, f) -> float:
        return float(np.sum(f(self.X, self.Y) * self.W) + np.sum(f(self.Xr, self.Yr) * self.Wr))


_QCACHE: list = [None, None]


def _quadrature(profile) -> _QuadratureQ2:
    # single-slot cache keyed on profile identity
    if _QCACHE[0] is not profile:
        _QCACHE[:] = [profile, _QuadratureQ2(profile)]
    return _QCACHE[1]


def _check_degree(well: WellSpec) -> None:
    if well.degree > MAX_DEGREE:
        raise AccuracyError(f"degree {well.degree} exceeds {MAX_DEGREE}; the fixed quadrature box is too small")


def h_function(well: WellSpec, profile, y, scale: float = 1.0) -> float:
    """H(y) = ∫scale·m(x + y)Q²(x)dx."""
    _check_degree(well)
    quad = _quadrature(profile)
    y0, y1 = float(y[0]), float(y[1])
    return scale * quad.integrate(lambda X, Y: well.local(X + y0, Y + y1))


def h_gradient(well: WellSpec, profile, y, scale: float = 1.0) -> np.ndarray:
    return h_value_and_gradient(well, profile, y, scale)[1]


def h_value_and_gradient(well: WellSpec, profile, y, scale: float = 1.0) -> tuple[float, np.ndarray]:
    _check_degree(well)
    quad = _quadrature(profile)
    y0, y1 = float(y[0]), float(y[1])
    tot = np.zeros(3)
    for X, Y, W in ((quad.X, quad.Y, quad.W), (quad.Xr, quad.Yr, quad.Wr)):
        v, gx, gy = well.local_with_gradient(X + y0, Y + y1)
        tot += [np.sum(v * W), np.sum(gx * W), np.sum(gy * W)]
    return scale * float(tot[0]), scale * tot[1:]


@dataclass(frozen=True)
class WellResult:
    index: int
    degree: float
    scale: float
    lam: float
    y_star: tuple[float, float]
    grad_norm: float
    converged: bool


@dataclass(frozen=True)
class WellAnalysis:
    wells: tuple[WellResult, ...]
    p: float
    z_bar: tuple[int, ...]
    lambda0: float
    z0: tuple[int, ...]
    locations: tuple[tuple[float, float], ...]

    @property
    def y0(self) -> tuple[float, float]:
        return self.wells[self.z0[0]].y_star

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "lambda0": self.lambda0,
            "z_bar": list(self.z_bar),
            "z0": list(self.z0),
            "wells": [
                {"index": w.index, "x": list(self.locations[w.index]), "p": w.degree, "scale": w.scale,
                 "lambda": w.lam, "y_star": list(w.y_star), "grad_norm": w.grad_norm,
                 "converged": w.converged}
                for w in self.wells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WellAnalysis":
        wells = tuple(
            WellResult(int(w["index"]), float(w["p"]), float(w["scale"]), float(w["lambda"]),
                       tuple(w["y_star"]), float(w["grad_norm"]), bool(w["converged"]))
            for w in d["wells"]
        )
        locs = tuple(tuple(w["x"]) for w in d["wells"])
        return cls(wells, float(d["p"]), tuple(d["z_bar"]), float(d["lambda0"]), tuple(d["z0"]), locs)


def _minimize_h(well: WellSpec, profile, scale: float, index: int) -> WellResult:
    h0 = h_function(well, profile, (0.0, 0.0), scale)
    norm = max(abs(h0), 1.0)

    def fun(y):
        v, g = h_value_and_gradient(well, profile, y, scale)
        return v / norm, g / norm

    seeds = np.linspace(-SEED_SPAN, SEED_SPAN, 5)
    best = None
    for sx in seeds:
        for sy in seeds:
            res = sp_minimize(fun, np.array([sx, sy]), jac=True, method="BFGS", options={"gtol": 1e-9})
            if best is None or res.fun < best.fun - 1e-13:
                best = res
    y = best.x
    g = float(np.linalg.norm(fun(y)[1])) * norm
    converged = bool(g <= 1e-6 * norm)
    return WellResult(index, well.degree, scale, float(best.fun * norm), (float(y[0]), float(y[1])), g, converged)


def analyze_wells(spec: PotentialSpec, profile) -> WellAnalysis:
    results = []
    for i, w in enumerate(spec.wells):
        scale = spec.local_scale(i)
        r = _minimize_h(w, profile, scale, i)
        if not r.converged:
            warnings.warn(f"H minimization for well {i} did not converge (|∇H|={r.grad_norm:.2e})", stacklevel=2)
        results.append(r)
    usable = [r for r in results if r.converged] or results
    p = max(r.degree for r in usable)
    z_bar = tuple(r.index for r in usable if r.degree == p)
    lambda0 = min(results[i].lam for i in z_bar)
    z0 = tuple(i for i in z_bar if results[i].lam - lambda0 <= TIE_TOL * max(1.0, abs(lambda0)))
    return WellAnalysis(tuple(results), p, z_bar, lambda0, z0, tuple(w.location for w in spec.wells))
