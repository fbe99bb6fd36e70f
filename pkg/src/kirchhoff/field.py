"""Grid fields and the discrete Kirchhoff energy.

Fields live on a uniform square grid whose outer ring is held at zero.  All
integrals are plain h²-weighted sums (the trapezoid rule, since the ring
vanishes).  The kinetic integral θ is the quadratic form of the discrete
negative Laplacian, θ = h²⟨u, -Δ_h u⟩, so the gradient/energy pair is exactly
consistent and discrete integration by parts holds to rounding.

Two stencils are available.  ``"fourth_order"`` (default) is the 5-point
per-axis fourth-order stencil with odd reflection across the zero ring;
``"five_point"`` is the standard second-order cross.  Both are diagonalized
by the type-I discrete sine transform, which the minimizer uses to build
preconditioners.
"""

from __future__ import annotations

import functools
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, NumericalError

STENCILS = ("fourth_order", "five_point")
BOUNDARIES = ("dirichlet_zero",)
MASS_TOL = 1e-8


@dataclass(frozen=True)
class GridSpec:
    half_width: float
    n: int
    center: tuple[float, float] = (0.0, 0.0)
    boundary: str = "dirichlet_zero"
    stencil: str = "fourth_order"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 32:
            raise ContractError(f"grid needs n ≥ 32 points per axis, got {self.n}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ContractError(f"half_width must be positive, got {self.half_width}")
        if self.boundary not in BOUNDARIES:
            raise ContractError(f"unsupported boundary {self.boundary!r}")
        if self.stencil not in STENCILS:
            raise ContractError(f"unknown stencil {self.stencil!r}; expected one of {STENCILS}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        cx, cy = self.center
        L = self.half_width
        return (cx - L, cx + L), (cy - L, cy + L)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.center[0] - self.half_width, self.center[0] + self.half_width, self.n)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.center[1] - self.half_width, self.center[1] + self.half_width, self.n)

    @property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays indexed [i, j] ↦ (x_i, y_j)."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def with_(self, **changes) -> "GridSpec":
        d = dict(half_width=self.half_width, n=self.n, center=self.center,
                 boundary=self.boundary, stencil=self.stencil)
        d.update(changes)
        return GridSpec(**d)

    def as_dict(self) -> dict:
        return {"L": self.half_width, "n": self.n, "h": self.h, "boundary": self.boundary,
                "center": list(self.center), "stencil": self.stencil}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(half_width=float(d["L"]), n=int(d["n"]), center=tuple(d.get("center", (0.0, 0.0))),
                   boundary=d.get("boundary", "dirichlet_zero"), stencil=d.get("stencil", "fourth_order"))


@dataclass(frozen=True, eq=False)
class Field2D:
    grid: GridSpec
    values: np.ndarray
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        n = self.grid.n
        if v.shape != (n, n):
            raise ContractError(f"field shape {v.shape} does not match grid ({n}, {n})")
        if not np.all(np.isfinite(v)):
            raise NumericalError("field contains non-finite values")
        if np.any(v[0, :]) or np.any(v[-1, :]) or np.any(v[:, 0]) or np.any(v[:, -1]):
            raise ContractError("boundary ring must be zero under dirichlet_zero")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @classmethod
    def from_interior(cls, grid: GridSpec, interior: np.ndarray, flags=frozenset()) -> "Field2D":
        v = np.zeros((grid.n, grid.n))
        v[1:-1, 1:-1] = interior
        return cls(grid, v, flags)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]

    def scaled(self, c: float) -> "Field2D":
        return Field2D(self.grid, c * self.values, self.flags)


@dataclass(frozen=True)
class FieldIntegrals:
    mass: float
    theta: float
    l4: float


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float
    kirchhoff: float
    interaction: float
    total: float

    def as_dict(self) -> dict:
        return {"kinetic": self.kinetic, "potential": self.potential, "kirchhoff": self.kirchhoff,
                "interaction": self.interaction, "total": self.total}


# ---------------------------------------------------------------------------
# discrete Laplacian


def neg_laplacian_interior(u: np.ndarray, h: float, stencil: str = "fourth_order") -> np.ndarray:
    """-Δ_h over the last two axes of interior values (zero ring implied outside)."""
    lead = [(0, 0)] * (u.ndim - 2)
    if stencil == "five_point":
        p = np.pad(u, lead + [(1, 1), (1, 1)])
        c = p[..., 1:-1, 1:-1]
        out = 4.0 * c - p[..., 2:, 1:-1] - p[..., :-2, 1:-1] - p[..., 1:-1, 2:] - p[..., 1:-1, :-2]
        return out / (h * h)
    # odd reflection across the zero ring realises the sine-series extension
    p = np.pad(np.pad(u, lead + [(1, 1), (1, 1)]), lead + [(1, 1), (1, 1)], mode="reflect", reflect_type="odd")
    c = p[..., 2:-2, 2:-2]
    out = 60.0 * c
    out -= 16.0 * (p[..., 3:-1, 2:-2] + p[..., 1:-3, 2:-2] + p[..., 2:-2, 3:-1] + p[..., 2:-2, 1:-3])
    out += p[..., 4:, 2:-2] + p[..., :-4, 2:-2] + p[..., 2:-2, 4:] + p[..., 2:-2, :-4]
    return out / (12.0 * h * h)


def neg_laplacian(u: Field2D) -> np.ndarray:
    """-Δ_h u as a full n×n array with a zero ring."""
    out = np.zeros_like(u.values)
    out[1:-1, 1:-1] = neg_laplacian_interior(u.interior, u.grid.h, u.grid.stencil)
    return out


@functools.lru_cache(maxsize=16)
def laplacian_symbol(n: int, h: float, stencil: str) -> np.ndarray:
    """Eigenvalues of -Δ_h on the interior in the DST-I basis, shape (n-2, n-2)."""
    m = n - 2
    k = np.arange(1, m + 1) * np.pi / (m + 1)
    if stencil == "five_point":
        s = (2.0 - 2.0 * np.cos(k)) / (h * h)
    else:
        s = (30.0 - 32.0 * np.cos(k) + 2.0 * np.cos(2 * k)) / (12.0 * h * h)
    out = s[:, None] + s[None, :]
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# potential on a grid


def potential_values(V, grid: GridSpec) -> np.ndarray | None:
    """Evaluate V (None, an n×n array, an object with ``evaluate(X, Y)`` or a callable) on the grid."""
    if V is None:
        return None
    if isinstance(V, np.ndarray):
        if V.shape != (grid.n, grid.n):
            raise ContractError(f"potential array shape {V.shape} does not match grid")
        return V
    X, Y = grid.mesh
    if hasattr(V, "evaluate"):
        out = V.evaluate(X, Y)
    elif callable(V):
        out = V(X, Y)
    else:
        raise ContractError(f"cannot evaluate potential of type {type(V).__name__}")
    out = np.asarray(out, dtype=float)
    if out.shape != X.shape or not np.all(np.isfinite(out)):
        raise ContractError("potential is not finite on the grid")
    return out


# ---------------------------------------------------------------------------
# functionals


def _w(u: Field2D) -> float:
    return u.grid.h ** 2


def field_integrals(u: Field2D) -> FieldIntegrals:
    w = _w(u)
    v = u.values
    mass = w * float(np.sum(v * v))
    theta = w * float(np.sum(v * neg_laplacian(u)))
    l4 = w * float(np.sum(v ** 4))
    return FieldIntegrals(mass, max(theta, 0.0), l4)


def mass(u: Field2D) -> float:
    return _w(u) * float(np.sum(u.values ** 2))


def normalize(u: Field2D) -> Field2D:
    m = mass(u)
    if not m > 0:
        raise ContractError("cannot normalize a zero field")
    return u.scaled(1.0 / math.sqrt(m))


def energy(u: Field2D, a: float, b: float, V=None) -> EnergyBreakdown:
    if a < 0 or b < 0:
        raise ContractError(f"need a ≥ 0 and b ≥ 0, got a={a}, b={b}")
    fi = field_integrals(u)
    Vg = potential_values(V, u.grid)
    pot = 0.0 if Vg is None else 0.5 * _w(u) * float(np.sum(Vg * u.values ** 2))
    kin = 0.5 * fi.theta
    kir = 0.25 * b * fi.theta ** 2
    inter = -0.25 * a * fi.l4
    return EnergyBreakdown(kin, pot, kir, inter, kin + pot + kir + inter)


def gn_ratio(u: Field2D, a_star: float | None = None) -> float:
    """l4·a*/(2·θ·mass); at most 1 in the continuum, 1 exactly on rescaled ground states."""
    if a_star is None:
        from .ground_state import a_star as _a

        a_star = _a()
    fi = field_integrals(u)
    if not (fi.mass > 0 and fi.theta > 0):
        raise ContractError("gn_ratio needs positive mass and kinetic integral")
    return fi.l4 * a_star / (2.0 * fi.theta * fi.mass)


def l2_gradient(u: Field2D, a: float, b: float, V=None) -> Field2D:
    """g = (1 + bθ)(-Δ_h u) + Vu - a u³, the gradient of the energy in the h²-weighted inner product."""
    lap = neg_laplacian(u)
    theta = _w(u) * float(np.sum(u.values * lap))
    g = (1.0 + b * theta) * lap - a * u.values ** 3
    Vg = potential_values(V, u.grid)
    if Vg is not None:
        g = g + Vg * u.values
    g[0, :] = g[-1, :] = g[:, 0] = g[:, -1] = 0.0
    return Field2D(u.grid, g)


def _check_unit_mass(u: Field2D) -> None:
    m = mass(u)
    if abs(m - 1.0) > MASS_TOL:
        raise ContractError(f"field mass {m!r} is not 1 ± {MASS_TOL}")


def lagrange_mu(u: Field2D, a: float, b: float, V=None) -> float:
    """μ = θ + ∫Vu² + bθ² - a∫u⁴ for a unit-mass field."""
    _check_unit_mass(u)
    fi = field_integrals(u)
    Vg = potential_values(V, u.grid)
    vint = 0.0 if Vg is None else _w(u) * float(np.sum(Vg * u.values ** 2))
    return fi.theta + vint + b * fi.theta ** 2 - a * fi.l4


def el_residual(u: Field2D, a: float, b: float, V=None) -> float:
    """‖g - μu‖₂ for a unit-mass field."""
    mu = lagrange_mu(u, a, b, V)
    g = l2_gradient(u, a, b, V).values
    r = g - mu * u.values
    return math.sqrt(_w(u) * float(np.sum(r * r)))


def resample(u: Field2D, grid: GridSpec, center_src=None, center_dst=None, zoom: float = 1.0,
             order: int = 1) -> Field2D:
    """w(x) = u(c_src + zoom·(x - c_dst)) on ``grid``, zero outside the source box.

    ``order`` is the spline order (1 = bilinear).  No mass renormalization.
    """
    from scipy.ndimage import map_coordinates

    src = u.grid
    c_src = src.center if center_src is None else center_src
    c_dst = grid.center if center_dst is None else center_dst
    X, Y = grid.mesh
    xs = c_src[0] + zoom * (X - c_dst[0])
    ys = c_src[1] + zoom * (Y - c_dst[1])
    (x0, _), (y0, _) = src.bounds
    coords = np.array([(xs - x0) / src.h, (ys - y0) / src.h])
    vals = map_coordinates(u.values, coords, order=order, mode="constant", cval=0.0, prefilter=order > 1)
    vals[0, :] = vals[-1, :] = vals[:, 0] = vals[:, -1] = 0.0
    return Field2D(grid, vals)


def refine_peak(u: Field2D) -> tuple[tuple[float, float], float]:
    """Grid argmax moved to the stationary point of a quadratic fitted on its 3×3 neighbourhood."""
    v = u.values
    i, j = np.unravel_index(int(np.argmax(v)), v.shape)
    g = u.grid
    x, y = float(g.x[i]), float(g.y[j])
    if not (1 <= i < g.n - 1 and 1 <= j < g.n - 1):
        return (x, y), float(v[i, j])
    di, dj = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
    patch = v[i - 1:i + 2, j - 1:j + 2].ravel()
    s, t = di.ravel(), dj.ravel()
    M = np.column_stack([np.ones(9), s, t, s * s, s * t, t * t])
    c = np.linalg.lstsq(M, patch, rcond=None)[0]
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    try:
        off = np.linalg.solve(H, -c[1:3])
    except np.linalg.LinAlgError:
        off = np.zeros(2)
    if not np.all(np.isfinite(off)) or np.any(np.abs(off) > 1.0) or np.any(np.linalg.eigvalsh(H) >= 0):
        return (x, y), float(v[i, j])
    val = c[0] + c[1] * off[0] + c[2] * off[1] + c[3] * off[0] ** 2 + c[4] * off[0] * off[1] + c[5] * off[1] ** 2
    return (x + off[0] * g.h, y + off[1] * g.h), float(val)


# ---------------------------------------------------------------------------
# snapshots


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_field(u: Field2D, path) -> None:
    """Write values as CSV (or .npy) with a JSON sidecar ``<path>.json`` describing the grid."""
    path = Path(path)
    meta = json.dumps(u.grid.as_dict(), indent=2, sort_keys=True) + "\n"
    if path.suffix == ".npy":
        buf = io.BytesIO()
        np.save(buf, u.values)
        data = buf.getvalue()
    else:
        lines = [",".join(format(x, ".17g") for x in row) for row in u.values]
        data = ("\n".join(lines) + "\n").encode()
    write_atomic(path, data)
    write_atomic(_sidecar(path), meta.encode())


def load_field(path) -> Field2D:
    path = Path(path)
    side = _sidecar(path)
    if not path.exists() or not side.exists():
        raise ConfigurationError(f"field snapshot {path} or its sidecar {side.name} is missing")
    grid = GridSpec.from_dict(json.loads(side.read_text()))
    if path.suffix == ".npy":
        values = np.load(path)
    else:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    return Field2D(grid, values)


def write_atomic(path: Path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
