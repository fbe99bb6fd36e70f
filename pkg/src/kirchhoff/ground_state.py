"""Radial ground state Q of -ΔQ + Q = Q³ in the plane, computed by shooting.

The radial ODE Q'' + Q'/r - Q + Q³ = 0 with Q'(0) = 0 is integrated with
classical RK4.  The 1/r term is removable at the origin, where the right-hand
side takes its limit Q''(0) = (Q(0) - Q(0)³)/2.

Initial values above the ground-state value Q(0)* overshoot and cross zero;
values below it turn back before reaching zero.  Bisection on that outcome
brackets Q(0)*.  Because the decaying solution is a separatrix, any
bracket of width δ only pins the profile down to r ~ log(1/δ)/2; past that
radius the profile is continued by a fitted c·r^(-1/2)·e^(-k r) tail.
"""

from __future__ import annotations

import enum
import functools
import logging
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import PchipInterpolator
from scipy.special import exp1

from .errors import AccuracyError, ConfigurationError, ContractError
from .field import Field2D, GridSpec

logger = logging.getLogger(__name__)

MAX_STEP = 0.05
DECAY_THRESHOLD = 1e-4
# relative gap between the bracketing traces beyond which samples are not trusted
TRUST_GAP = 1e-5
BRACKET = (1.0, 5.0)


class Outcome(str, enum.Enum):
    CROSSED_ZERO = "CROSSED_ZERO"
    DIVERGED = "DIVERGED"
    DECAYED = "DECAYED"


@dataclass(frozen=True)
class ShootingTrace:
    q0: float
    r_grid: np.ndarray
    q_values: np.ndarray
    dq_values: np.ndarray
    outcome: Outcome
    r_stop: float


@numba.njit(cache=True)
def _rhs(r, q, p):
    if r == 0.0:
        return p, 0.5 * (q - q * q * q)
    return p, -p / r + q - q * q * q


@numba.njit(cache=True)
def _rk4(q0, r_max, dr):
    n = int(np.floor(r_max / dr + 0.5)) + 1
    qs = np.empty(n)
    ps = np.empty(n)
    qs[0] = q0
    ps[0] = 0.0
    q = q0
    p = 0.0
    h2 = 0.5 * dr
    for i in range(n - 1):
        r = i * dr
        k1q, k1p = _rhs(r, q, p)
        k2q, k2p = _rhs(r + h2, q + h2 * k1q, p + h2 * k1p)
        k3q, k3p = _rhs(r + h2, q + h2 * k2q, p + h2 * k2p)
        k4q, k4p = _rhs(r + dr, q + dr * k3q, p + dr * k3p)
        q = q + dr / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + dr / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        qs[i + 1] = q
        ps[i + 1] = p
        if not (np.isfinite(q) and np.isfinite(p)):
            return qs[: i + 2], ps[: i + 2], 3
        if q <= 0.0:
            return qs[: i + 2], ps[: i + 2], 1
        if p > 0.0:
            return qs[: i + 2], ps[: i + 2], 2
    return qs, ps, 0


def integrate_radial(q0: float, r_max: float = 20.0, dr: float = 1e-4) -> ShootingTrace:
    """Shoot from Q(0) = q0 and classify the trajectory.

    Integration stops at the first zero crossing, the first radius where Q'
    turns positive (the trajectory falls back), a non-finite value, or r_max.
    CROSSED_ZERO: some sample is ≤ 0.  DECAYED: otherwise, Q fell below 1e-4.
    DIVERGED: neither.
    """
    if not q0 > 0:
        raise ContractError(f"q0 must be positive, got {q0}")
    if not 0 < dr <= MAX_STEP:
        raise ContractError(f"step dr={dr} outside (0, {MAX_STEP}]")
    if r_max < 10:
        raise ContractError(f"r_max={r_max} must be at least 10")
    qs, ps, code = _rk4(float(q0), float(r_max), float(dr))
    r = np.arange(qs.size) * dr
    if code == 1:
        outcome = Outcome.CROSSED_ZERO
    elif np.min(qs) < DECAY_THRESHOLD:
        # fell below the threshold before any turn-back or blow-up
        outcome = Outcome.DECAYED
    else:
        # turned back, went non-finite, or stalled (e.g. Q ≡ 1)
        outcome = Outcome.DIVERGED
    return ShootingTrace(float(q0), r, qs, ps, outcome, float(r[-1]))


@dataclass(frozen=True)
class RadialProfile:
    """Sampled ground state on [0, r_cut] with an exponential tail beyond.

    Calling the profile evaluates Q(r) for any r ≥ 0: monotone cubic
    interpolation on the samples, ``tail_prefactor * r**-0.5 * exp(-decay_rate*r)``
    past the last sample.
    """

    r_grid: np.ndarray
    q_values: np.ndarray
    dq_values: np.ndarray
    q0_star: float
    decay_rate: float
    tail_prefactor: float
    bracket_width: float

    @property
    def r_cut(self) -> float:
        return float(self.r_grid[-1])

    @functools.cached_property
    def _interp(self) -> PchipInterpolator:
        return PchipInterpolator(self.r_grid, self.q_values, extrapolate=False)

    @functools.cached_property
    def _dinterp(self) -> PchipInterpolator:
        return PchipInterpolator(self.r_grid, self.dq_values, extrapolate=False)

    def tail(self, r):
        r = np.asarray(r, dtype=float)
        return self.tail_prefactor * np.exp(-self.decay_rate * r) / np.sqrt(r)

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        inside = r <= self.r_cut
        out = np.empty_like(r)
        out[inside] = self._interp(r[inside])
        rt = r[~inside]
        out[~inside] = self.tail(rt)
        return out

    def derivative(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        inside = r <= self.r_cut
        out = np.empty_like(r)
        out[inside] = self._dinterp(r[inside])
        rt = r[~inside]
        out[~inside] = -self.tail(rt) * (self.decay_rate + 0.5 / rt)
        return out

    def ode_residual(self) -> np.ndarray:
        """|Q'' + Q'/r - Q + Q³| at interior nodes, with Q'' from centered differences of Q'."""
        dr = self.r_grid[1] - self.r_grid[0]
        r = self.r_grid[1:-1]
        q = self.q_values[1:-1]
        d2 = (self.dq_values[2:] - self.dq_values[:-2]) / (2 * dr)
        return np.abs(d2 + self.dq_values[1:-1] / r - q + q**3)


def _trusted_length(lo: ShootingTrace, hi: ShootingTrace) -> int:
    n = min(lo.q_values.size, hi.q_values.size)
    q_lo, q_hi = lo.q_values[:n], hi.q_values[:n]
    mid = 0.5 * (q_lo + q_hi)
    bad = (np.abs(q_hi - q_lo) > TRUST_GAP * np.abs(mid)) | (mid <= 0)
    bad |= (lo.dq_values[:n] >= 0) | (hi.dq_values[:n] >= 0)
    bad[0] = False
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else n


def _fit_tail(r: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    r_end = r[-1]
    sel = (r >= max(r_end - 4.0, 4.0)) & (r > 0)
    if sel.sum() < 10:
        raise AccuracyError(f"trusted profile too short for a tail fit (r_cut={r_end:.3f})")
    slope, _ = np.polyfit(r[sel], np.log(q[sel] * np.sqrt(r[sel])), 1)
    return float(-slope), float(r_end)


def solve_q(tol: float = 1e-10, r_max: float = 20.0, dr: float = 1e-4) -> RadialProfile:
    """Bisect on Q(0) until the [turned-back, crossed-zero] bracket is narrower than tol."""
    if tol < np.finfo(float).eps * 1e3:
        raise ContractError(f"tol={tol} is below 1e3 machine epsilons")
    lo, hi = BRACKET
    t_lo = integrate_radial(lo, r_max, dr)
    t_hi = integrate_radial(hi, r_max, dr)
    if t_lo.outcome is Outcome.CROSSED_ZERO or t_hi.outcome is not Outcome.CROSSED_ZERO:
        raise ConfigurationError(
            f"no sign change on bracket {BRACKET}: outcomes {t_lo.outcome.value}, {t_hi.outcome.value}"
        )
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        t = integrate_radial(mid, r_max, dr)
        if t.outcome is Outcome.CROSSED_ZERO:
            hi, t_hi = mid, t
        else:
            lo, t_lo = mid, t
    q0 = 0.5 * (lo + hi)
    mid_trace = integrate_radial(q0, r_max, dr)
    n = _trusted_length(t_lo, t_hi)
    n = min(n, mid_trace.q_values.size)
    r = mid_trace.r_grid[:n]
    q = mid_trace.q_values[:n]
    dq = mid_trace.dq_values[:n]
    rate, r_end = _fit_tail(r, q)
    # anchor the tail to the last trusted sample so Q stays continuous
    prefactor = float(q[-1] * np.sqrt(r_end) * np.exp(rate * r_end))
    logger.debug("q0*=%.15g, trusted to r=%.3f, decay rate %.5f", q0, r_end, rate)
    return RadialProfile(r, q, dq, float(q0), rate, prefactor, float(hi - lo))


@dataclass(frozen=True)
class GroundStateConstants:
    a_star: float
    second_moment: float
    quartic: float
    decay_rate: float
    gradient_sq: float
    q0_star: float

    def as_dict(self) -> dict:
        return {
            "a_star": self.a_star,
            "second_moment": self.second_moment,
            "quartic": self.quartic,
            "decay_rate": self.decay_rate,
            "q0_star": self.q0_star,
        }


def _tail_integrals(c: float, k: float, R: float) -> dict[str, float]:
    al = 2 * k
    e = np.exp(-al * R)
    mass = c**2 * e / al
    inv_r2 = e / R - al * exp1(al * R)
    grad = c**2 * (k**2 * e / al + k * exp1(al * R) + 0.25 * inv_r2)
    quartic = c**4 * exp1(2 * al * R)
    moment = c**2 * e * (R**2 / al + 2 * R / al**2 + 2 / al**3)
    return {k_: 2 * np.pi * v for k_, v in
            dict(mass=mass, grad=grad, quartic=quartic, moment=moment).items()}


def ground_state_constants(profile: RadialProfile, rtol: float = 1e-3) -> GroundStateConstants:
    """Integrals 2π∫f(r) r dr over the samples plus the analytic tail.

    Raises AccuracyError when ∫|∇Q|² = ∫Q² = ½∫Q⁴ fails beyond ``rtol``.
    """
    r, q, dq = profile.r_grid, profile.q_values, profile.dq_values
    tail = _tail_integrals(profile.tail_prefactor, profile.decay_rate, profile.r_cut)
    two_pi = 2 * np.pi
    mass = two_pi * simpson(q**2 * r, x=r) + tail["mass"]
    grad = two_pi * simpson(dq**2 * r, x=r) + tail["grad"]
    quartic = two_pi * simpson(q**4 * r, x=r) + tail["quartic"]
    moment = two_pi * simpson(q**2 * r**3, x=r) + tail["moment"]
    d_grad = abs(grad - mass) / mass
    d_quartic = abs(quartic - 2 * mass) / mass
    if d_grad > rtol or d_quartic > rtol:
        raise AccuracyError(
            f"ground-state identities violated: |∫|∇Q|²-∫Q²|/∫Q²={d_grad:.3e}, "
            f"|∫Q⁴-2∫Q²|/∫Q²={d_quartic:.3e} (tolerance {rtol})"
        )
    return GroundStateConstants(
        a_star=float(mass),
        second_moment=float(moment),
        quartic=float(quartic),
        decay_rate=profile.decay_rate,
        gradient_sq=float(grad),
        q0_star=profile.q0_star,
    )


@functools.lru_cache(maxsize=1)
def reference_ground_state() -> tuple[RadialProfile, GroundStateConstants]:
    """Process-wide profile used whenever a caller does not pass its own."""
    profile = solve_q(tol=1e-12, r_max=20.0, dr=1e-4)
    return profile, ground_state_constants(profile)


def a_star() -> float:
    return reference_ground_state()[1].a_star


class TruncationWarning(UserWarning):
    pass


def sample_field(
    profile: RadialProfile,
    grid: GridSpec,
    center=(0.0, 0.0),
    inv_scale: float = 1.0,
    a_star: float | None = None,
) -> Field2D:
    """Sample x ↦ (β/√a*)·Q(β|x - center|) on ``grid`` with β = inv_scale.

    When the grid does not reach center ± 8/β the result carries the
    ``"truncated"`` flag and a TruncationWarning is emitted.
    """
    if not inv_scale > 0:
        raise ContractError(f"inv_scale must be positive, got {inv_scale}")
    if a_star is None:
        a_star = ground_state_constants(profile).a_star
    cx, cy = map(float, center)
    reach = 8.0 / inv_scale
    (x0, x1), (y0, y1) = grid.bounds
    flags = frozenset()
    if cx - reach < x0 or cx + reach > x1 or cy - reach < y0 or cy + reach > y1:
        warnings.warn(
            f"grid does not cover center ± {reach:.3g}; sampled ground state is truncated",
            TruncationWarning,
            stacklevel=2,
        )
        flags = frozenset({"truncated"})
    X, Y = grid.mesh
    values = inv_scale / np.sqrt(a_star) * profile(inv_scale * np.hypot(X - cx, Y - cy))
    values[0, :] = values[-1, :] = values[:, 0] = values[:, -1] = 0.0
    return Field2D(grid, values, flags)
