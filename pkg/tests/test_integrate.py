import csv
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from chaos_triage.errors import ConfigError, NonFiniteStateError, SingularPointError
from chaos_triage.integrate import (
    IntegratorConfig,
    Termination,
    Trajectory,
    integrate,
    refinement_ladder,
    resample_uniform,
    solve,
)
from chaos_triage.systems import make_system
from helpers import rk4_order_slope

EXACT_LINEAR = np.array([math.exp(-1.0), math.exp(-2.0)])


@pytest.mark.parametrize("cfg", [IntegratorConfig(t_end=1.0), IntegratorConfig(method="rk4", dt=0.01, t_end=1.0)])
def test_linear_analytic(cfg):
    trj = integrate(make_system("linear-test"), (1.0, 1.0), cfg)
    assert trj.termination is Termination.COMPLETED
    assert trj.t_final == 1.0
    np.testing.assert_allclose(trj.final_state, EXACT_LINEAR, atol=1e-8)


def test_rotation_period_and_energy():
    trj = integrate(make_system("rotation-test"), (1.0, 0.0), IntegratorConfig(t_end=2 * math.pi))
    np.testing.assert_allclose(trj.final_state, (1.0, 0.0), atol=1e-6)
    energy = np.einsum("ij,ij->i", trj.states, trj.states)
    assert np.abs(energy - 1.0).max() <= 1e-8


def test_rk4_order_slope():
    slope, errs = rk4_order_slope()
    assert abs(slope - 4.0) <= 0.3
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_ladder_linear_rk4_error_drops_by_eight():
    trjs = refinement_ladder(make_system("linear-test"), (1.0, 1.0),
                             IntegratorConfig(method="rk4", dt=0.1, t_end=1.0), levels=3)
    errs = [np.linalg.norm(t.final_state - EXACT_LINEAR) for t in trjs]
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_ladder_parallel_matches_serial():
    args = (make_system("rotation-test"), (1.0, 0.0), IntegratorConfig(t_end=5.0))
    a = refinement_ladder(*args, levels=3, workers=1)
    b = refinement_ladder(*args, levels=3, workers=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.states, y.states)


def test_ladder_needs_two_levels():
    with pytest.raises(ConfigError):
        refinement_ladder(make_system("linear-test"), (1.0, 1.0), IntegratorConfig(), levels=1)


def test_determinism_bit_identical():
    sys = make_system("cdk2d")
    cfg = IntegratorConfig(t_end=20.0)
    a = integrate(sys, (1.0, 0.5), cfg)
    b = integrate(sys, (1.0, 0.5), cfg)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.states, b.states)


def _collision_time_oracle(sys, p0, radius):
    def hit(t, y):
        return y[0] ** 2 + y[1] ** 2 - radius ** 2

    hit.terminal = True
    sol = solve_ivp(lambda t, y: sys.rhs(y), (0, 10), p0, method="DOP853", rtol=1e-12, atol=1e-15, events=hit)
    return float(sol.t_events[0][0])


def test_nonsmooth_orbit_reaches_singular_point():
    # from (0.01, 0.01) the orbit runs into the origin long before t=100
    sys = make_system("nonsmooth-abs")
    trj = integrate(sys, (0.01, 0.01), IntegratorConfig(t_end=100.0))
    assert trj.termination is Termination.SINGULARITY_REACHED
    t_star = _collision_time_oracle(sys, (0.01, 0.01), 1e-6)
    assert trj.t_final == pytest.approx(t_star, abs=1e-5)
    assert np.linalg.norm(trj.states, axis=1).max() <= 10.0
    r_last = np.linalg.norm(trj.final_state)
    assert 1e-6 <= r_last <= 2e-6


def test_nonsmooth_collision_robust_across_ladder():
    trjs = refinement_ladder(make_system("nonsmooth-abs"), (0.01, 0.01), IntegratorConfig(t_end=100.0), levels=3)
    ts = [t.t_final for t in trjs]
    assert all(t.termination is Termination.SINGULARITY_REACHED for t in trjs)
    assert max(ts) - min(ts) < 1e-5


def test_cdk2d_singular_time_stable_under_refinement():
    # collision times agree to ~1e-7 across tolerances; the orbit reaches the origin in finite time
    trjs = refinement_ladder(make_system("cdk2d"), (0.1, 0.05), IntegratorConfig(t_end=50.0), levels=3)
    ts = np.array([t.t_final for t in trjs])
    assert all(t.termination is Termination.SINGULARITY_REACHED for t in trjs)
    assert (ts.max() - ts.min()) / ts.mean() < 1e-3


def test_truncated_trajectory_not_padded():
    trj = integrate(make_system("cdk2d"), (1.0, 0.5), IntegratorConfig(t_end=50.0))
    assert trj.termination is Termination.SINGULARITY_REACHED
    assert trj.t_final < 50.0
    assert np.all(np.diff(trj.times) > 0)
    assert np.all(np.isfinite(trj.states))


def test_kink_events_split_steps():
    # x' is proportional to x, so only passes through the origin (guard off) change the sign of x
    sys = make_system("nonsmooth-abs")
    trj = integrate(sys, (0.01, 0.01), IntegratorConfig(t_end=5.0, singular_guard=0.0))
    assert len(trj.events) >= 10
    x = trj.states[:, 0]
    straddle = (x[:-1] * x[1:] < 0) & (np.minimum(np.abs(x[:-1]), np.abs(x[1:])) > 1e-9)
    assert not straddle.any()


def test_kink_half_planes_invariant_with_guard():
    trj = integrate(make_system("nonsmooth-abs"), (0.01, 0.01), IntegratorConfig(t_end=100.0))
    assert np.all(trj.states[:, 0] > 0)
    assert trj.events == []


def test_event_time_on_rotation():
    # x = 0 is crossed at t = pi/2 and 3pi/2
    sys = make_system("rotation-test")
    trj, _ = solve(sys.rhs, np.array([1.0, 0.0]), 0.0, 5.0, IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12),
                   kinks=(lambda p: p[0],))
    ts = [t for t, _ in trj.events]
    assert ts == pytest.approx([math.pi / 2, 3 * math.pi / 2], abs=1e-9)


def test_stop_surface_ends_run():
    sys = make_system("rotation-test")
    trj, _ = solve(sys.rhs, np.array([1.0, 0.0]), 0.0, 10.0, IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12),
                   stops=(lambda p: p[1] + 0.5,))
    assert trj.termination is Termination.COMPLETED
    assert trj.t_final == pytest.approx(math.asin(0.5), abs=1e-9)


def test_rejected_steps_reported():
    trj = integrate(make_system("cdk2d"), (1.0, 0.5), IntegratorConfig(t_end=50.0))
    stats = trj.step_stats
    assert stats["rejected"] > 0
    assert stats["min"] <= stats["mean"] <= stats["max"]


def test_step_limit():
    trj = integrate(make_system("rotation-test"), (1.0, 0.0), IntegratorConfig(t_end=100.0, max_steps=5))
    assert trj.termination is Termination.STEP_LIMIT
    assert trj.step_stats["accepted"] == 5


def test_non_finite_raises_with_partial_trajectory():
    with pytest.raises(NonFiniteStateError) as info:
        solve(lambda y: y * y, np.array([1.0]), 0.0, 2.0, IntegratorConfig())
    part = info.value.trajectory
    assert part is not None and np.all(np.isfinite(part.states)) and part.t_final < 1.0


def test_bad_initial_state():
    with pytest.raises(SingularPointError):
        integrate(make_system("cdk2d"), (0.0, 0.0))
    with pytest.raises(ConfigError):
        integrate(make_system("cdk2d"), (1.0, 0.0, 0.0))


@pytest.mark.parametrize("kw", [{"dt": 0}, {"abs_tol": 1.0}, {"rel_tol": 0}, {"t_end": -1}, {"method": "euler"},
                                {"max_steps": 0}, {"singular_guard": -1}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        IntegratorConfig(**kw)


def test_refined_config():
    cfg = IntegratorConfig(method="rk4", dt=0.1)
    assert cfg.refined(2).dt == 0.025
    cfg = IntegratorConfig(abs_tol=1e-9, rel_tol=1e-8)
    assert cfg.refined(1).abs_tol == pytest.approx(1e-10) and cfg.refined(1).rel_tol == pytest.approx(1e-9)


def test_sample_grid_output():
    trj = integrate(make_system("rotation-test"), (1.0, 0.0), IntegratorConfig(t_end=1.0, sample_dt=0.1))
    np.testing.assert_allclose(trj.times, np.linspace(0, 1, 11), atol=1e-12)
    np.testing.assert_allclose(trj.states[:, 0], np.cos(trj.times), atol=1e-8)


def test_csv_full_precision(tmp_path):
    trj = integrate(make_system("cdk3d"), (1.0, 0.0, 0.5), IntegratorConfig(t_end=1.0))
    path = tmp_path / "t.csv"
    trj.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "x2", "x3"]
    back = np.array(rows[1:], dtype=float)
    assert np.array_equal(back[:, 0], trj.times)
    assert np.array_equal(back[:, 1:], trj.states)


def test_resample_uniform():
    t = np.linspace(0, 1, 11)
    trj = Trajectory.from_samples(t, np.column_stack([t, 2 * t]))
    grid, vals = resample_uniform(trj, 0.25)
    np.testing.assert_allclose(grid, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(vals[:, 1], 2 * grid)
