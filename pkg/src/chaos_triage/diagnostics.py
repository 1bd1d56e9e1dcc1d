"""Invariant-set indicators: Lyapunov spectrum, Kaplan-Yorke dimension,
power spectrum, autocorrelation and peak clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVarianceError,
    EmptyInputError,
    NoMaximaError,
    NonConvergedError,
    TooShortError,
    UnsortedInputError,
)
from .integrate import IntegratorConfig, Termination, Trajectory, resample_uniform, solve, write_columns_csv
from .systems import SingularPointError, SystemDef

GS_INTERVAL = 0.5
DRIFT_TOL = 0.05
SUM_RULE_TOL = 0.05
BROADBAND_FLATNESS = 0.2
BROADBAND_PEAK_FRACTION = 0.5
CLUSTER_TOL = 1e-3


def default_transient(t_end: float) -> float:
    """First 25% of the horizon or t=500, whichever is larger, but never past half the run."""
    return max(0.25 * t_end, min(500.0, 0.5 * t_end))


# -- Lyapunov spectrum -------------------------------------------------------

@dataclass
class LyapunovResult:
    exponents: np.ndarray
    history_t: np.ndarray
    history: np.ndarray
    divergence_avg: float
    transient_discarded: float
    termination: Termination
    converged: bool
    drift: float
    averaging_time: float
    trajectory: Trajectory | None = None
    notes: list = field(default_factory=list)

    @property
    def sum_rule_residual(self) -> float:
        """``|sum(exponents) - divergence_avg| / max(1, |divergence_avg|)``."""
        return abs(float(np.sum(self.exponents)) - self.divergence_avg) / max(1.0, abs(self.divergence_avg))

    def as_dict(self) -> dict:
        return {
            "exponents": [float(v) for v in self.exponents],
            "divergence_avg": self.divergence_avg,
            "sum_rule_residual": self.sum_rule_residual,
            "transient_discarded": self.transient_discarded,
            "averaging_time": self.averaging_time,
            "termination": self.termination.value,
            "converged": self.converged,
            "drift": self.drift,
            "notes": list(self.notes),
        }

    def history_to_csv(self, path) -> None:
        cols = [f"lambda{i + 1}" for i in range(self.history.shape[1] if self.history.size else len(self.exponents))]
        rows = np.column_stack([self.history_t, self.history]) if self.history.size else np.empty((0, len(cols) + 1))
        write_columns_csv(path, ["t", *cols], rows)


def _tangent_rhs(rhs, jac, n):
    def aug(u):
        p = u[:n]
        J = jac(p)
        Q = u[n:n + n * n].reshape(n, n)
        out = np.empty_like(u)
        out[:n] = rhs(p)
        out[n:n + n * n] = (J @ Q).ravel()
        out[-1] = J.trace()
        return out

    return aug


def lyapunov_spectrum(sys: SystemDef, p0, cfg: IntegratorConfig | None = None, gs_interval: float = GS_INTERVAL,
                      transient: float | None = None, *, strict: bool = False) -> LyapunovResult:
    """Full Lyapunov spectrum by the tangent-flow / QR (Benettin) method.

    The orbit and an orthonormal tangent frame are integrated together; every
    ``gs_interval`` time units the frame is re-orthonormalized by QR and the
    logs of ``|diag(R)|`` are accumulated once ``t`` passes ``transient``. The
    trace of the Jacobian is integrated alongside, giving the orbit-averaged
    divergence for the sum-rule check.

    Kinked fields use the one-sided Jacobian of whichever smooth piece the
    state is on; steps are split at kink crossings, so each step sees one
    piece. The field is continuous across the kink, hence no jump matrix.

    If the orbit reaches the singular guard ball the partial estimate is
    returned with ``converged=False``. With ``strict=True`` any unconverged
    result raises :class:`NonConvergedError` instead.
    """
    cfg = cfg or IntegratorConfig()
    n = sys.dim
    p0 = np.asarray(p0, dtype=float)
    if sys.in_singular_set(p0):
        raise SingularPointError(sys.name, p0)
    if gs_interval <= 0:
        raise ValueError("gs_interval must be > 0")
    t_end = cfg.t_end
    transient = default_transient(t_end) if transient is None else float(transient)
    if not 0 <= transient < t_end:
        raise ValueError(f"transient {transient} must lie in [0, t_end={t_end})")

    aug = _tangent_rhs(sys.rhs, sys.jac, n)
    u = np.concatenate([p0, np.eye(n).ravel(), [0.0]])
    guard = cfg.singular_guard if sys.has_singular_set else 0.0

    log_sum = np.zeros(n)
    log_sum_all = np.zeros(n)
    t = 0.0
    h = None
    t_acc = None          # time at which accumulation began
    trace_at_acc = 0.0
    hist_t, hist = [], []
    times, states, events = [np.array([0.0])], [p0[None, :]], []
    steps = {"accepted": 0, "rejected": 0, "min": math.inf, "max": 0.0, "sum": 0.0}
    status = Termination.COMPLETED
    message = ""

    while t < t_end * (1 - 1e-12):
        t_next = min(t + gs_interval, t_end)
        seg, h = solve(aug, u, t, t_next, cfg, n=n, guard_radius=guard, kinks=sys.kink_surfaces, h0=h)
        times.append(seg.times[1:])
        states.append(seg.states[1:, :n])
        events.extend(seg.events)
        st = seg.step_stats
        steps["accepted"] += st["accepted"]
        steps["rejected"] += st["rejected"]
        if st["accepted"]:
            steps["min"] = min(steps["min"], st["min"])
            steps["max"] = max(steps["max"], st["max"])
            steps["sum"] += st["mean"] * st["accepted"]
        u = seg.states[-1].copy()
        t_seg_end = float(seg.times[-1])

        Q, R = np.linalg.qr(u[n:n + n * n].reshape(n, n))
        d = np.diag(R)
        logs = np.log(np.abs(d))
        Q = Q * np.sign(d)
        u[n:n + n * n] = Q.ravel()
        log_sum_all += logs
        if t_acc is None and t >= transient - 1e-12:
            t_acc = t
            trace_at_acc = float(seg.states[0, -1])
        if t_acc is not None:
            log_sum += logs
            span = t_seg_end - t_acc
            if span > 0:
                hist_t.append(t_seg_end)
                hist.append(log_sum / span)
        t = t_seg_end
        if seg.termination is not Termination.COMPLETED:
            status = seg.termination
            message = seg.message
            break

    notes = []
    if sys.kink_surfaces:
        notes.append("tangent map uses the one-sided Jacobian per smooth piece; steps split at kink crossings")
    if t_acc is not None and t > t_acc:
        avg_time = t - t_acc
        exps = log_sum / avg_time
        div = (float(u[-1]) - trace_at_acc) / avg_time
        discarded = t_acc
    else:
        # stopped inside the transient: fall back to the whole run, unconverged by construction
        avg_time = t
        exps = log_sum_all / t if t > 0 else np.full(n, np.nan)
        div = float(u[-1]) / t if t > 0 else float("nan")
        discarded = 0.0
        notes.append("run ended before the transient; estimate covers the whole orbit")
    order = np.argsort(-exps, kind="stable")
    exps = exps[order]

    hist_t = np.array(hist_t)
    hist = np.array(hist)[:, order] if hist else np.empty((0, n))
    drift = _tail_drift(hist_t, hist, t_acc)
    converged = status is Termination.COMPLETED and drift <= DRIFT_TOL
    if status is not Termination.COMPLETED:
        notes.append(f"partial estimate: {status.value} ({message})")

    trj = Trajectory(
        times=np.concatenate(times),
        states=np.concatenate(states),
        termination=status,
        step_stats={
            "accepted": steps["accepted"],
            "rejected": steps["rejected"],
            "min": steps["min"] if steps["accepted"] else None,
            "mean": steps["sum"] / steps["accepted"] if steps["accepted"] else None,
            "max": steps["max"] if steps["accepted"] else None,
        },
        events=events,
        message=message,
    )
    res = LyapunovResult(
        exponents=exps,
        history_t=hist_t,
        history=hist,
        divergence_avg=div,
        transient_discarded=discarded,
        termination=status,
        converged=converged,
        drift=drift,
        averaging_time=avg_time,
        trajectory=trj,
        notes=notes,
    )
    if strict and not converged:
        raise NonConvergedError(f"{sys.name}: Lyapunov estimate not converged (drift={drift:.3g}, {status.value})", res)
    return res


def _tail_drift(hist_t, hist, t_acc):
    """Spread of the running top exponent over the last 10% of the averaging window."""
    if t_acc is None or hist.shape[0] < 2:
        return math.inf
    t_last = hist_t[-1]
    tail = hist_t >= t_last - 0.1 * (t_last - t_acc)
    vals = hist[tail, 0]
    if vals.size < 2:
        vals = hist[-2:, 0]
    return float(vals.max() - vals.min())


def kaplan_yorke(exponents) -> float:
    """Kaplan-Yorke dimension of a spectrum sorted in descending order.

    >>> round(kaplan_yorke([0.5, -1.0]), 12)
    1.5
    """
    lam = np.asarray(exponents, dtype=float)
    if lam.size == 0:
        raise EmptyInputError("empty Lyapunov spectrum")
    if np.any(np.diff(lam) > 0):
        raise UnsortedInputError("exponents must be sorted in descending order")
    if lam[0] < 0:
        return 0.0
    partial = np.cumsum(lam)
    k = int(np.nonzero(partial >= 0)[0][-1]) + 1
    if k == lam.size:
        return float(lam.size)
    return k + float(partial[k - 1]) / abs(float(lam[k]))


# -- signal indicators -------------------------------------------------------

def _uniform_signal(traj: Trajectory, component: int, dt: float | None, transient: float):
    if traj.times[-1] <= transient:
        raise TooShortError(f"trajectory ends at t={traj.t_final} before the transient {transient}")
    if dt is None:
        tail = traj.times[traj.times >= transient]
        dt = (tail[-1] - tail[0]) / max(len(tail) - 1, 1)
    grid, vals = resample_uniform(traj, dt, t_start=max(transient, float(traj.times[0])))
    return grid, vals[:, component], dt


@dataclass
class SpectrumSummary:
    frequencies: np.ndarray
    power: np.ndarray
    spectral_flatness: float
    dominant_peaks: list
    peak_fraction: float
    total_power: float

    def is_broadband(self, flatness_min: float = BROADBAND_FLATNESS,
                     peak_fraction_max: float = BROADBAND_PEAK_FRACTION) -> bool:
        return self.spectral_flatness >= flatness_min and self.peak_fraction < peak_fraction_max

    def to_csv(self, path) -> None:
        write_columns_csv(path, ["frequency", "power"], np.column_stack([self.frequencies, self.power]))


def power_spectrum(traj: Trajectory, component: int = 1, *, dt: float | None = None,
                   transient: float = 0.0, min_samples: int = 1024) -> SpectrumSummary:
    """One-sided Hann-windowed periodogram of one state component.

    The signal is resampled onto a uniform grid (linear interpolation), the
    mean is removed and a Hann taper applied. Powers are normalized so they
    sum to the mean square of the tapered signal (Parseval). Flatness is the
    geometric over the arithmetic mean of the non-DC bins; it is 0 for a
    signal with no variance.
    """
    _, x, dt = _uniform_signal(traj, component, dt, transient)
    N = x.size
    if N < min_samples:
        raise TooShortError(f"{N} samples after the transient; need >= {min_samples}")
    w = (x - x.mean()) * np.hanning(N)
    X = np.fft.rfft(w)
    power = np.abs(X) ** 2 / N**2
    power[1:] *= 2.0
    if N % 2 == 0:
        power[-1] /= 2.0
    freqs = np.fft.rfftfreq(N, d=dt)
    total = float(power.sum())

    bins = power[1:]
    if float(np.var(x)) <= 1e-24 * max(1.0, float(np.mean(x)) ** 2) or total == 0.0:
        return SpectrumSummary(freqs, power, 0.0, [], 0.0, total)
    with np.errstate(divide="ignore"):
        flat = float(np.exp(np.mean(np.log(bins))) / np.mean(bins))
    interior = np.nonzero((bins[1:-1] >= bins[:-2]) & (bins[1:-1] > bins[2:]))[0] + 2
    top = interior[np.argsort(-power[interior], kind="stable")][:5]
    peaks = [(float(freqs[i]), float(power[i])) for i in top]
    frac = float(bins.max() / total)
    return SpectrumSummary(freqs, power, flat, peaks, frac, total)


def autocorrelation(traj: Trajectory, component: int = 1, max_lag: float = 20.0, *,
                    dt: float | None = None, transient: float = 0.0):
    """Normalized autocorrelation and its 1/e decay lag.

    Returns ``(lags, acf, decay_lag)`` with lags in time units, ``acf[0] == 1``
    and ``decay_lag`` the first lag where ``|acf| < 1/e`` (linearly
    interpolated between samples) or ``None``.
    """
    _, x, dt = _uniform_signal(traj, component, dt, transient)
    x = x - x.mean()
    var = float(x @ x)
    if var <= 1e-24 * x.size:
        raise DegenerateVarianceError("signal has zero variance; autocorrelation undefined")
    m = int(round(max_lag / dt))
    if x.size < max(m + 2, 16):
        raise TooShortError(f"{x.size} samples cannot resolve lag {max_lag}")
    nfft = 1 << int(math.ceil(math.log2(2 * x.size)))
    F = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(F * np.conj(F), nfft)[: m + 1] / var
    lags = np.arange(m + 1) * dt
    below = np.nonzero(np.abs(acf) < math.exp(-1))[0]
    decay = None
    if below.size:
        k = int(below[0])
        a0, a1 = abs(acf[k - 1]), abs(acf[k])
        decay = float(lags[k - 1] + (a0 - math.exp(-1)) / (a0 - a1) * dt)
    return lags, acf, decay


def acf_to_csv(path, lags, acf) -> None:
    write_columns_csv(path, ["lag", "acf"], np.column_stack([lags, acf]))


@dataclass
class PeakClusters:
    maxima_values: np.ndarray
    maxima_times: np.ndarray
    clusters: list
    cluster_tol: float

    @property
    def count(self) -> int:
        return len(self.clusters)


def cluster_values(values, tol: float = CLUSTER_TOL) -> list:
    """Greedy single-linkage clustering of scalars: sorted values split where a gap exceeds ``tol``."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return []
    cuts = np.nonzero(np.diff(v) > tol)[0] + 1
    return [(float(g.mean()), int(g.size)) for g in np.split(v, cuts)]


def local_maxima(times, values, derivs=None):
    """Times and values of local maxima of a sampled signal.

    With derivative samples, maxima sit where the derivative changes sign
    from + to -, located on the cubic Hermite interpolant of the interval.
    Without them, discrete maxima are refined by a quadratic through the
    three neighbouring samples.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    out_t, out_y = [], []
    if derivs is not None:
        d = np.asarray(derivs, dtype=float)
        idx = np.nonzero((d[:-1] > 0) & (d[1:] <= 0))[0]
        for i in idx:
            h = t[i + 1] - t[i]
            y0, y1, m0, m1 = y[i], y[i + 1], d[i] * h, d[i + 1] * h
            # derivative of the Hermite cubic in theta: A th^2 + B th + C
            A = 6 * y0 + 3 * m0 - 6 * y1 + 3 * m1
            B = -6 * y0 - 4 * m0 + 6 * y1 - 2 * m1
            C = m0
            th = _hermite_root(A, B, C)
            t2, t3 = th * th, th ** 3
            val = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + th) * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1
            out_t.append(t[i] + th * h)
            out_y.append(val)
        return np.array(out_t), np.array(out_y)
    idx = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    for i in idx:
        c = np.polyfit(t[i - 1:i + 2] - t[i], y[i - 1:i + 2], 2)
        if c[0] < 0:
            tv = -c[1] / (2 * c[0])
            if abs(tv) <= max(t[i + 1] - t[i], t[i] - t[i - 1]):
                out_t.append(t[i] + tv)
                out_y.append(np.polyval(c, tv))
                continue
        out_t.append(t[i])
        out_y.append(y[i])
    return np.array(out_t), np.array(out_y)


def _hermite_root(A, B, C):
    if abs(A) < 1e-300:
        return min(max(-C / B, 0.0), 1.0) if B != 0 else 0.0
    disc = max(B * B - 4 * A * C, 0.0)
    s = math.sqrt(disc)
    roots = [(-B - s) / (2 * A), (-B + s) / (2 * A)]
    inside = [r for r in roots if -1e-12 <= r <= 1 + 1e-12]
    # the maximum is where the derivative goes from + to -; C > 0 at theta=0
    if not inside:
        return min(max(roots[0], 0.0), 1.0)
    return min(max(min(inside), 0.0), 1.0)


def detect_peaks(traj: Trajectory, component: int = 1, transient: float = 0.0,
                 cluster_tol: float = CLUSTER_TOL) -> PeakClusters:
    """Local maxima of one component after ``transient``, clustered by value.

    The number of clusters estimates the period multiplicity of the orbit.
    Raises :class:`NoMaximaError` when no maximum survives the transient.
    """
    keep = traj.times >= transient
    t = traj.times[keep]
    y = traj.states[keep, component]
    d = traj.derivs[keep, component] if traj.derivs is not None else None
    mt, my = local_maxima(t, y, d)
    if my.size == 0:
        raise NoMaximaError(f"no local maxima of component {component} after t={transient}")
    return PeakClusters(my, mt, cluster_values(my, cluster_tol), cluster_tol)
