"""Closed-form limits, blow-up scales and cut-off trial states.

Functions whose formula has no meaning in a regime (typically a < a*) return
``None`` instead of raising, so sweeps over regimes can branch on it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .field import EnergyBreakdown, Field2D, GridSpec, energy, normalize
from .ground_state import RadialProfile, TruncationWarning, reference_ground_state, sample_field

# a is treated as equal to a* within this relative distance; a* itself is
# only known to about 1e-9 from the shooting bisection
CRITICAL_RTOL = 1e-8


def _astar(a_star: float | None) -> float:
    return reference_ground_state()[1].a_star if a_star is None else a_star


def regime(a: float, a_star: float | None = None) -> str:
    """'subcritical', 'critical' or 'supercritical'."""
    s = _astar(a_star)
    if abs(a - s) <= CRITICAL_RTOL * s:
        return "critical"
    return "supercritical" if a > s else "subcritical"


def r_b(a: float, b: float, a_star: float | None = None) -> float | None:
    """(a - a*)/(b·a*), the optimal kinetic level of the translation-free problem."""
    if not b > 0:
        raise ContractError(f"b must be positive, got {b}")
    if regime(a, a_star) != "supercritical":
        return None
    s = _astar(a_star)
    return (a - s) / (b * s)


def h_quadratic(r, a: float, b: float, a_star: float | None = None):
    """h(r) = (b/4)r² - ((a - a*)/(2a*))·r."""
    s = _astar(a_star)
    r = np.asarray(r, dtype=float)
    return 0.25 * b * r * r - (a - s) / (2 * s) * r


def e_bar_closed(a: float, b: float, a_star: float | None = None) -> float | None:
    """Infimum of the potential-free energy: -(1/4b)((a - a*)/a*)² for a > a*, 0 at a*."""
    if not b > 0:
        raise ContractError(f"b must be positive, got {b}")
    reg = regime(a, a_star)
    if reg == "subcritical":
        return None
    if reg == "critical":
        return 0.0
    return float(h_quadratic(r_b(a, b, a_star), a, b, a_star))


def theory_epsilon(a: float, b: float, p: float | None = None, lambda0: float | None = None,
                   a_star: float | None = None) -> float | None:
    if not b > 0:
        raise ContractError(f"b must be positive, got {b}")
    s = _astar(a_star)
    reg = regime(a, s)
    if reg == "subcritical":
        return None
    if reg == "supercritical":
        return math.sqrt(b * s / (a - s))
    if p is None or lambda0 is None or not (p > 0 and lambda0 > 0):
        raise ContractError("the critical blow-up scale needs p > 0 and lambda0 > 0")
    return (2 * b * s / (p * lambda0)) ** (1.0 / (p + 4))


def theory_energy_coefficient(p: float, lambda0: float, a_star: float | None = None) -> float:
    """((4+p)/(4p))·(pλ₀/(2a*))^{4/(p+4)}."""
    if not (p > 0 and lambda0 > 0):
        raise ContractError("need p > 0 and lambda0 > 0")
    s = _astar(a_star)
    return (4 + p) / (4 * p) * (p * lambda0 / (2 * s)) ** (4.0 / (p + 4))


def theory_energy_astar(b: float, p: float, lambda0: float, a_star: float | None = None) -> float:
    """Leading-order minimum energy at a = a*: coefficient · b^{p/(p+4)}."""
    if not b > 0:
        raise ContractError(f"b must be positive, got {b}")
    return theory_energy_coefficient(p, lambda0, a_star) * b ** (p / (p + 4))


@dataclass(frozen=True)
class TheoryScales:
    r_b: float | None
    epsilon: float | None
    e_closed: float | None


def theory_scales(a: float, b: float, p: float | None = None, lambda0: float | None = None,
                  a_star: float | None = None) -> TheoryScales:
    reg = regime(a, a_star)
    if reg == "supercritical":
        return TheoryScales(r_b(a, b, a_star), theory_epsilon(a, b, a_star=a_star), e_bar_closed(a, b, a_star))
    if reg == "critical" and p is not None and lambda0 is not None:
        return TheoryScales(None, theory_epsilon(a, b, p, lambda0, a_star), theory_energy_astar(b, p, lambda0, a_star))
    return TheoryScales(None, None, e_bar_closed(a, b, a_star))


def u_bar_field(a: float, b: float, grid: GridSpec, profile: RadialProfile | None = None) -> Field2D:
    """Potential-free minimizer √r_b/√a*·Q(√r_b·(x - grid center)).

    Carries the ``"under_resolved"`` flag when h > r_b^{-1/2}/4.
    """
    if profile is None:
        profile, consts = reference_ground_state()
        s = consts.a_star
    else:
        from .ground_state import ground_state_constants

        s = ground_state_constants(profile).a_star
    rb = r_b(a, b, s)
    if rb is None:
        raise ContractError("the potential-free minimizer exists only for a > a*")
    beta = math.sqrt(rb)
    u = sample_field(profile, grid, grid.center, beta, s)
    if grid.h > 0.25 / beta:
        u = Field2D(u.grid, u.values, u.flags | {"under_resolved"})
    return u


def cutoff(r):
    """1 for r ≤ 1, 0 for r ≥ 2, quintic smoothstep in between."""
    r = np.asarray(r, dtype=float)
    t = np.clip(2.0 - r, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@dataclass(frozen=True)
class TrialBound:
    field: Field2D
    breakdown: EnergyBreakdown
    center: tuple[float, float]
    scale: float
    flags: frozenset

    @property
    def energy(self) -> float:
        return self.breakdown.total


def _trial_field(profile, a_star, grid, center, beta) -> Field2D:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        base = sample_field(profile, grid, center, beta, a_star)
    X, Y = grid.mesh
    vals = base.values * cutoff(np.hypot(X - center[0], Y - center[1]))
    flags = set(base.flags)
    if grid.h > 0.25 / beta:
        flags.add("under_resolved")
    u = Field2D(grid, vals, frozenset(flags))
    return normalize(u)


def trial_upper_bound(a: float, b: float, potential, grid: GridSpec, profile: RadialProfile | None = None,
                      analysis=None) -> TrialBound | None:
    """Energy of the cut-off trial state built on the flattest well(s).

    a = a*: τ·Q(τ(x - x₀))/√a* with τ = (pλ₀/(2b a*))^{1/(p+4)} and x₀ = x_i + y₀/τ.
    a > a*: the potential-free minimizer at scale ε̄ = r_b^{-1/2}, centred at x_i + ε̄y₀.
    The minimum over Z₀ wells lying inside the grid is returned; ``None`` when no
    trial state applies (a < a*, or a = a* without a potential).
    """
    if profile is None:
        profile, consts = reference_ground_state()
    else:
        from .ground_state import ground_state_constants

        consts = ground_state_constants(profile)
    s = consts.a_star
    reg = regime(a, s)
    if reg == "subcritical":
        return None
    if potential is None:
        if reg == "critical":
            return None
        beta = math.sqrt(r_b(a, b, s))
        u = _trial_field(profile, s, grid, grid.center, beta)
        return TrialBound(u, energy(u, a, b, None), grid.center, 1.0 / beta, u.flags)
    if analysis is None:
        from .potential import analyze_wells

        analysis = analyze_wells(potential, profile)
    if reg == "critical":
        beta = (analysis.p * analysis.lambda0 / (2 * b * s)) ** (1.0 / (analysis.p + 4))
    else:
        beta = math.sqrt(r_b(a, b, s))
    (x0, x1), (y0_, y1_) = grid.bounds
    best = None
    for i in analysis.z0:
        xi = analysis.locations[i]
        ys = analysis.wells[i].y_star
        c = (xi[0] + ys[0] / beta, xi[1] + ys[1] / beta)
        if not (x0 < c[0] < x1 and y0_ < c[1] < y1_):
            continue
        u = _trial_field(profile, s, grid, c, beta)
        e = energy(u, a, b, potential)
        if best is None or e.total < best.breakdown.total:
            best = TrialBound(u, e, c, 1.0 / beta, u.flags)
    return best
