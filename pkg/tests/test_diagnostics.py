import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaos_triage.diagnostics import (
    autocorrelation,
    cluster_values,
    default_transient,
    detect_peaks,
    kaplan_yorke,
    local_maxima,
    lyapunov_spectrum,
    power_spectrum,
)
from chaos_triage.errors import (
    DegenerateVarianceError,
    EmptyInputError,
    NoMaximaError,
    NonConvergedError,
    SingularPointError,
    TooShortError,
    UnsortedInputError,
)
from chaos_triage.integrate import IntegratorConfig, Termination, Trajectory, integrate
from chaos_triage.systems import make_system
from helpers import parseval_error


@pytest.fixture(scope="module")
def linear_lyap():
    return lyapunov_spectrum(make_system("linear-test"), (1.0, 1.0), IntegratorConfig(t_end=400.0))


def test_lyapunov_linear(linear_lyap):
    np.testing.assert_allclose(linear_lyap.exponents, (-1.0, -2.0), atol=1e-3)
    assert linear_lyap.converged
    assert linear_lyap.sum_rule_residual <= 0.05
    assert linear_lyap.divergence_avg == pytest.approx(-3.0, abs=1e-9)


def test_lyapunov_rotation():
    res = lyapunov_spectrum(make_system("rotation-test"), (1.0, 0.0), IntegratorConfig(t_end=400.0))
    np.testing.assert_allclose(res.exponents, (0.0, 0.0), atol=1e-3)
    assert res.converged


def test_lyapunov_history_and_transient(linear_lyap, tmp_path):
    assert linear_lyap.transient_discarded == pytest.approx(default_transient(400.0))
    assert np.all(np.diff(linear_lyap.history_t) > 0)
    assert linear_lyap.history.shape == (len(linear_lyap.history_t), 2)
    linear_lyap.history_to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().startswith("t,lambda1,lambda2")


def test_lyapunov_sorted_descending():
    res = lyapunov_spectrum(make_system("linear-test", a=3.0, b=0.5), (1.0, 1.0), IntegratorConfig(t_end=100.0))
    np.testing.assert_allclose(res.exponents, (-0.5, -3.0), atol=1e-3)


def test_lyapunov_3d_sum_rule():
    res = lyapunov_spectrum(make_system("cdk3d"), (1.0, 0.0, 0.5), IntegratorConfig(t_end=200.0))
    assert res.exponents.shape == (3,)
    if res.termination is Termination.COMPLETED:
        assert res.sum_rule_residual <= 0.05


def test_lyapunov_partial_on_singularity():
    res = lyapunov_spectrum(make_system("nonsmooth-abs"), (0.01, 0.01), IntegratorConfig(t_end=100.0))
    assert res.termination is Termination.SINGULARITY_REACHED
    assert not res.converged
    assert any("partial estimate" in n for n in res.notes)
    with pytest.raises(NonConvergedError) as info:
        lyapunov_spectrum(make_system("nonsmooth-abs"), (0.01, 0.01), IntegratorConfig(t_end=100.0), strict=True)
    assert info.value.result is not None


def test_lyapunov_symmetric_initial_conditions_agree():
    sys = make_system("nonsmooth-abs")
    cfg = IntegratorConfig(t_end=100.0)
    a = lyapunov_spectrum(sys, (0.01, 0.01), cfg)
    b = lyapunov_spectrum(sys, (-0.01, 0.01), cfg)
    np.testing.assert_allclose(a.exponents, b.exponents, atol=0.05)


def test_lyapunov_rejects_singular_start():
    with pytest.raises(SingularPointError):
        lyapunov_spectrum(make_system("cdk2d"), (0.0, 0.0))


@pytest.mark.parametrize("lam, want", [
    ((1.25, -1.4), 1 + 1.25 / 1.4),
    ((-1.0, -2.0), 0.0),
    ((0.5, -1.0), 1.5),
    ((0.5, 0.2), 2.0),
    ((1.0, 0.0, -2.0), 2.5),
])
def test_kaplan_yorke(lam, want):
    assert kaplan_yorke(lam) == pytest.approx(want, abs=1e-12)


def test_kaplan_yorke_errors():
    with pytest.raises(EmptyInputError):
        kaplan_yorke([])
    with pytest.raises(UnsortedInputError):
        kaplan_yorke([-1.4, 1.25])


def _signal(t, x):
    return Trajectory.from_samples(t, x)


def test_spectrum_sinusoid():
    t = np.arange(0, 2000, 0.01)
    spec = power_spectrum(_signal(t, np.sin(2 * np.pi * t / 5)), 0)
    assert spec.dominant_peaks[0][0] == pytest.approx(0.2, abs=1e-3)
    assert spec.spectral_flatness <= 0.05
    assert not spec.is_broadband()
    assert np.all(spec.power >= 0)


def test_spectrum_constant_signal():
    t = np.arange(0, 100, 0.05)
    spec = power_spectrum(_signal(t, np.full(t.size, 3.0)), 0)
    assert spec.spectral_flatness == 0.0
    assert spec.total_power == pytest.approx(0.0, abs=1e-20)


def test_spectrum_white_noise_broadband():
    rng = np.random.default_rng(5)
    t = np.arange(8192) * 0.1
    spec = power_spectrum(_signal(t, rng.normal(size=t.size)), 0)
    assert spec.is_broadband()


def test_spectrum_too_short():
    t = np.arange(100) * 0.1
    with pytest.raises(TooShortError):
        power_spectrum(_signal(t, np.sin(t)), 0)


def test_parseval():
    assert parseval_error() <= 0.01


def test_spectrum_csv(tmp_path):
    t = np.arange(0, 200, 0.1)
    power_spectrum(_signal(t, np.sin(t)), 0).to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "frequency,power"


def test_acf_cosine():
    t = np.arange(0, 2000, 0.01)
    lags, acf, decay = autocorrelation(_signal(t, np.cos(t)), 0, max_lag=5.0)
    assert acf[0] == pytest.approx(1.0)
    np.testing.assert_allclose(acf, np.cos(lags), atol=5e-3)
    assert decay == pytest.approx(math.acos(math.exp(-1)), abs=2e-3)


def test_acf_constant_degenerate():
    t = np.arange(0, 100, 0.05)
    with pytest.raises(DegenerateVarianceError):
        autocorrelation(_signal(t, np.ones(t.size)), 0)


def test_acf_too_short():
    t = np.arange(20) * 0.5
    with pytest.raises(TooShortError):
        autocorrelation(_signal(t, np.sin(t)), 0, max_lag=20.0)


def test_nonsmooth_run_too_short_for_signal_indicators():
    # the default orbit ends at the singular point after t ~ 0.17
    trj = integrate(make_system("nonsmooth-abs"), (0.01, 0.01), IntegratorConfig(t_end=2000.0))
    with pytest.raises(TooShortError):
        power_spectrum(trj, 1, transient=default_transient(2000.0))
    with pytest.raises(TooShortError):
        autocorrelation(trj, 1, transient=default_transient(2000.0))


def test_peaks_sine_with_and_without_derivatives():
    t = np.arange(0, 200, 0.05)
    for derivs in (np.cos(t), None):
        trj = Trajectory.from_samples(t, np.sin(t), derivs)
        pk = detect_peaks(trj, 0)
        assert pk.count == 1
        assert pk.clusters[0][0] == pytest.approx(1.0, abs=1e-6)


def _alternating(t):
    amp = np.where((t // (2 * np.pi)).astype(int) % 2 == 0, 1.0, 0.5)
    return amp * np.sin(t)


def test_peaks_alternating():
    t = np.arange(0, 400, 0.01)
    pk = detect_peaks(Trajectory.from_samples(t, _alternating(t)), 0)
    assert pk.count == 2
    centers = sorted(c for c, _ in pk.clusters)
    assert centers == pytest.approx([0.5, 1.0], abs=1e-5)


@pytest.mark.parametrize("scale", [0.9, 1.1])
def test_peak_clusters_stable_under_tolerance(scale):
    t = np.arange(0, 400, 0.01)
    assert detect_peaks(Trajectory.from_samples(t, np.sin(t)), 0, cluster_tol=1e-3 * scale).count == 1
    assert detect_peaks(Trajectory.from_samples(t, _alternating(t)), 0, cluster_tol=1e-3 * scale).count == 2


def test_peaks_equilibrium_raises():
    trj = integrate(make_system("linear-test"), (1.0, 1.0), IntegratorConfig(t_end=20.0))
    with pytest.raises(NoMaximaError):
        detect_peaks(trj, 1)


def test_peaks_nonsmooth_period_two_window_unreachable():
    # at a = 9.65 the orbit from (0.01, 0.01) also reaches the origin before any transient has passed
    sys = make_system("nonsmooth-abs", a=9.65)
    trj = integrate(sys, (0.01, 0.01), IntegratorConfig(t_end=400.0))
    assert trj.termination is Termination.SINGULARITY_REACHED
    with pytest.raises(NoMaximaError):
        detect_peaks(trj, 1, transient=default_transient(400.0))


def test_local_maxima_quadratic_refinement():
    t = np.arange(0, 10, 0.3)
    mt, my = local_maxima(t, np.sin(t))
    assert my == pytest.approx([1.0, 1.0], abs=5e-3)
    assert mt == pytest.approx([np.pi / 2, 5 * np.pi / 2], abs=2e-2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=60), st.randoms())
def test_cluster_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert cluster_values(values) == cluster_values(shuffled)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=60))
def test_cluster_partition_properties(values):
    cl = cluster_values(values, 1e-3)
    assert sum(n for _, n in cl) == len(values)
    centers = [c for c, _ in cl]
    assert all(b - a > 1e-3 for a, b in zip(centers, centers[1:]))
