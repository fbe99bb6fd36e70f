import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kirchhoff.errors import AccuracyError, ContractError
from kirchhoff.field import GridSpec, field_integrals
from kirchhoff.ground_state import (
    Outcome,
    TruncationWarning,
    ground_state_constants,
    integrate_radial,
    sample_field,
    solve_q,
)

# frozen from the tol = 1e-12, dr = 1e-4 reference solve
Q0_STAR = 2.2062008646503
A_STAR = 11.700896524695798
SECOND_MOMENT = 13.894861650529


def test_reference_values(reference):
    profile, c = reference
    assert profile.q0_star == pytest.approx(Q0_STAR, abs=1e-9)
    assert c.a_star == pytest.approx(A_STAR, rel=1e-9)
    assert c.second_moment == pytest.approx(SECOND_MOMENT, rel=1e-8)
    assert c.quartic == pytest.approx(2 * A_STAR, rel=1e-9)
    assert set(c.as_dict()) == {"a_star", "second_moment", "quartic", "decay_rate", "q0_star"}


def test_identities(reference):
    c = reference[1]
    assert abs(c.gradient_sq / c.a_star - 1) <= 1e-3
    assert abs(c.quartic / c.a_star - 2) <= 1e-3
    assert 0 < c.second_moment < np.inf
    assert abs(c.decay_rate - 1) <= 0.05


def test_outcome_at_q0_star(profile):
    t = integrate_radial(profile.q0_star)
    assert t.outcome is Outcome.DECAYED
    assert t.q_values[-1] < 1e-4
    assert t.q_values[0] == profile.q0_star and t.dq_values[0] == 0.0


@pytest.mark.parametrize("q0,outcome", [
    (0.5, Outcome.DIVERGED),
    (1.0, Outcome.DIVERGED),
    (2.0, Outcome.DIVERGED),
    (2.3, Outcome.CROSSED_ZERO),
    (5.0, Outcome.CROSSED_ZERO),
])
def test_shooting_classification(q0, outcome):
    t = integrate_radial(q0)
    assert t.outcome is outcome
    assert t.q_values[0] == q0


@given(st.floats(0.05, 6.0))
@settings(max_examples=30, deadline=None)
def test_outcome_matches_trace(q0):
    t = integrate_radial(q0, r_max=12.0, dr=1e-3)
    crossed = bool(np.any(t.q_values <= 0))
    assert (t.outcome is Outcome.CROSSED_ZERO) == crossed
    if t.outcome is Outcome.DIVERGED and np.all(np.isfinite(t.dq_values)) and t.dq_values[-1] > 0:
        # only a trajectory that fell back can turn upward
        assert q0 < Q0_STAR


@pytest.mark.parametrize("kw", [dict(q0=0.0), dict(q0=-1.0), dict(q0=1.0, dr=0.06), dict(q0=1.0, r_max=5.0)])
def test_integrate_rejects(kw):
    with pytest.raises(ContractError):
        integrate_radial(**kw)


def test_solve_q_rejects_tiny_tol():
    with pytest.raises(ContractError):
        solve_q(tol=1e-15)


def test_refinement():
    coarse = solve_q(tol=1e-10, dr=2e-4)
    fine = solve_q(tol=1e-10, dr=1e-4)
    assert fine.q0_star == pytest.approx(Q0_STAR, abs=1e-9)
    assert coarse.q0_star == pytest.approx(fine.q0_star, rel=1e-6)
    a1 = ground_state_constants(coarse).a_star
    a2 = ground_state_constants(fine).a_star
    assert abs(a1 - a2) / a2 < 1e-5


def test_profile_invariants(profile):
    q = profile.q_values
    assert np.all(q > 0)
    assert np.all(np.diff(q) < 0)
    r = np.linspace(0, 20, 4001)
    qq = profile(r)
    assert np.all(qq > 0) and np.all(np.diff(qq) < 0)
    assert np.max(profile.ode_residual()) < 1e-6


def test_tail_slope(profile):
    r = np.linspace(8, 14, 121)
    slope = np.polyfit(r, np.log(profile(r) * np.sqrt(r)), 1)[0]
    assert abs(slope + 1) <= 0.05


def test_tail_continuity(profile):
    rc = profile.r_cut
    assert profile(rc + 1e-9) == pytest.approx(profile(rc), rel=1e-6)


def test_identity_violation_raises(profile):
    from dataclasses import replace

    bad = replace(profile, q_values=profile.q_values * 1.01)
    with pytest.raises(AccuracyError):
        ground_state_constants(bad)


def test_sample_field_unit_scale(profile, astar):
    grid = GridSpec(12.0, 256)
    u = sample_field(profile, grid, (0.0, 0.0), 1.0, astar)
    fi = field_integrals(u)
    assert fi.mass == pytest.approx(1, abs=1e-6)
    assert fi.theta == pytest.approx(1, abs=1e-3)
    assert "truncated" not in u.flags


def test_sample_field_scale_two(profile, astar):
    grid = GridSpec(12.0, 256)
    u = sample_field(profile, grid, (0.0, 0.0), 2.0, astar)
    assert field_integrals(u).theta == pytest.approx(4, abs=4e-3)


def test_sample_field_truncation_warns(profile, astar):
    grid = GridSpec(4.0, 64)
    with pytest.warns(TruncationWarning):
        u = sample_field(profile, grid, (0.0, 0.0), 1.0, astar)
    assert "truncated" in u.flags


def test_sample_field_rejects_bad_scale(profile):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ContractError):
            sample_field(profile, GridSpec(12.0, 64), (0, 0), 0.0)
