"""Property checks shared by the unit tests and the acceptance gate."""

import math

import numpy as np

from chaos_triage.bifurcation import feigenbaum_ratios
from chaos_triage.diagnostics import power_spectrum
from chaos_triage.integrate import IntegratorConfig, Trajectory, integrate
from chaos_triage.systems import SYSTEM_NAMES, make_system


def random_states(sys, n, rng, *, min_dist=1e-3):
    """States at least ``min_dist`` from the singular point and from kink surfaces."""
    out = []
    while len(out) < n:
        r = 10 ** rng.uniform(-2.5, 1.0)
        v = rng.normal(size=sys.dim)
        p = r * v / np.linalg.norm(v)
        if sys.has_singular_set and np.linalg.norm(p) < min_dist:
            continue
        if any(abs(g(p)) < min_dist for g in sys.kink_surfaces):
            continue
        out.append(p)
    return np.array(out)


def fd_jacobian(f, p, h):
    n = p.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (f(p + e) - f(p - e)) / (2 * h)
    return J


def jacobian_fd_error(name, n=1000, seed=0):
    """Worst relative Jacobian-vs-central-difference error over ``n`` random states."""
    sys = make_system(name)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in random_states(sys, n, rng):
        # step scaled to the distance from the nearest non-smooth set
        scale = float(np.linalg.norm(p))
        for g in sys.kink_surfaces:
            scale = min(scale, abs(g(p)))
        h = 1e-5 * max(scale, 1e-12) if sys.has_singular_set or sys.kink_surfaces else 1e-5 * max(1.0, scale)
        J = sys.jacobian(p)
        Jfd = fd_jacobian(sys.rhs, p, h)
        err = np.abs(J - Jfd).max() / max(1.0, np.abs(J).max())
        worst = max(worst, float(err))
    return worst


def equivariance_violations(name, n=1000, seed=1):
    """Number of random states where ``F(S p) != S F(p)`` bit for bit."""
    sys = make_system(name)
    rng = np.random.default_rng(seed)
    bad = 0
    for p in random_states(sys, n, rng):
        if not np.array_equal(sys.rhs(sys.reflect(p)), sys.reflect(sys.rhs(p))):
            bad += 1
    return bad


def rk4_order_slope():
    dts = np.array([0.1, 0.05, 0.025])
    sys = make_system("linear-test")
    exact = np.array([math.exp(-1.0), math.exp(-2.0)])
    errs = [np.linalg.norm(integrate(sys, (1.0, 1.0), IntegratorConfig(method="rk4", dt=dt, t_end=1.0)).final_state
                           - exact) for dt in dts]
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0]), errs


def parseval_error(seed=0, n=4096):
    """Relative mismatch between summed spectral power and the tapered signal's mean square."""
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=n)) + 3.0 * np.sin(0.3 * np.arange(n))
    spec = power_spectrum(Trajectory.from_samples(np.arange(n) * 0.05, x), 0)
    w = (x - x.mean()) * np.hanning(n)
    ms = float(np.mean(w * w))
    return abs(spec.total_power - ms) / ms


def brute_ratios(a):
    out = []
    for n in range(2, len(a)):
        out.append((a[n - 1] - a[n - 2]) / (a[n] - a[n - 1]))
    return out


def feigenbaum_oracle_error(n_seq=1000, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_seq):
        k = int(rng.integers(3, 12))
        steps = rng.uniform(1e-3, 1.0, size=k - 1)
        a = np.concatenate([[rng.uniform(-10, 10)], steps]).cumsum()
        if rng.random() < 0.5:
            a = a[::-1]
        got = feigenbaum_ratios(list(a))
        want = brute_ratios(list(a))
        worst = max(worst, max(abs(g - w) / max(1.0, abs(w)) for g, w in zip(got, want)))
    return worst


ALL_SYSTEMS = SYSTEM_NAMES

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES = []
