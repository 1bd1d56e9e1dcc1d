"""Explicit Runge-Kutta integration with singular guards and kink events.

Two methods are provided: classic fixed-step RK4 and the adaptive
Dormand-Prince 5(4) pair with its 4th-order continuous extension. Both
localize zero crossings of a system's kink surfaces by bisection on the
interpolant and split the step there, so no accepted step straddles a kink.

A trajectory that would enter the singular guard ball stops at the last safe
state with termination ``SingularityReached``. Truncated trajectories are
returned as-is and never padded.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, LadderLevelError, NonFiniteStateError, SingularPointError
from .systems import SINGULAR_EPS, SystemDef


class Termination(str, Enum):
    COMPLETED = "Completed"
    SINGULARITY_REACHED = "SingularityReached"
    STEP_LIMIT = "StepLimit"


METHODS = ("rk45", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``singular_guard`` is the radius of the forbidden ball around a system's
    singular point; ``0`` disables the guard and lets the stepper pass as
    close to the singularity as floating point allows. ``sample_dt`` switches
    the stored output from accepted steps to a uniform grid produced by the
    method's interpolant.
    """

    method: str = "rk45"
    dt: float = 0.01
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    t_end: float = 2000.0
    max_steps: int = 10**8
    singular_guard: float = SINGULAR_EPS
    event_tol: float = 1e-10
    max_step: float = math.inf
    sample_dt: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        for name in ("abs_tol", "rel_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.t_end > 0:
            raise ConfigError("t_end must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if self.singular_guard < 0:
            raise ConfigError("singular_guard must be >= 0")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ConfigError("sample_dt must be > 0")
        if not self.max_step > 0:
            raise ConfigError("max_step must be > 0")

    def refined(self, level: int) -> "IntegratorConfig":
        """Config for ladder rung ``level`` (0 = self): dt halved or tolerances /10 per rung."""
        if self.method == "rk4":
            return replace(self, dt=self.dt / 2**level)
        f = 10.0**level
        return replace(self, abs_tol=self.abs_tol / f, rel_tol=self.rel_tol / f)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    termination: Termination
    step_stats: dict
    derivs: np.ndarray | None = None
    events: list = field(default_factory=list)
    message: str = ""

    @classmethod
    def from_samples(cls, times, states, derivs=None) -> "Trajectory":
        """Wrap externally sampled data, e.g. a synthetic signal."""
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if derivs is not None:
            derivs = np.asarray(derivs, dtype=float)
            derivs = derivs[:, None] if derivs.ndim == 1 else derivs
        return cls(np.asarray(times, dtype=float), states, Termination.COMPLETED,
                   {"accepted": len(states) - 1, "rejected": 0}, derivs=derivs)

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def completed(self) -> bool:
        return self.termination is Termination.COMPLETED

    def __len__(self):
        return len(self.times)

    def summary(self) -> dict:
        return {
            "termination": self.termination.value,
            "t_final": self.t_final,
            "final_state": [float(v) for v in self.final_state],
            "n_samples": len(self),
            "n_events": len(self.events),
            "step_stats": self.step_stats,
            "message": self.message,
        }

    def to_csv(self, path) -> None:
        write_columns_csv(
            path,
            ["t"] + [f"x{i + 1}" for i in range(self.states.shape[1])],
            np.column_stack([self.times, self.states]),
        )


def write_columns_csv(path, header: Sequence[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(v), ".17g") for v in row])


def to_jsonable(v):
    """Plain-Python copy of ``v`` for JSON; non-finite floats become strings."""
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


# Dormand-Prince 5(4) tableau, error weights and dense-output matrix
# (Dormand & Prince 1980; continuous extension of Shampine 1986).
_A = np.array([
    [0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class _Unsafe(Exception):
    """A stage or new state fell inside the singular guard ball."""


class _Problem:
    """Right-hand side plus the guard and kink tests applied to its first ``n`` components."""

    def __init__(self, rhs, n, guard_radius=0.0, kinks=(), stops=()):
        self.rhs = rhs
        self.n = n
        self.guard2 = guard_radius * guard_radius
        # kink surfaces first, then terminal surfaces
        self.kinks = tuple(kinks) + tuple(stops)
        self.n_kinks = len(kinks)

    def check(self, y):
        if self.guard2 > 0.0:
            s = y[: self.n]
            if float(s @ s) < self.guard2:
                raise _Unsafe

    def f(self, y):
        self.check(y)
        return self.rhs(y)


def _rms(v):
    return math.sqrt(float(v @ v) / v.size)


class _DP45:
    order = 5

    @staticmethod
    def step(prob, y, f0, h):
        K = np.empty((7, y.size))
        K[0] = f0
        for s in range(1, 6):
            K[s] = prob.f(y + h * (K[:s].T @ _A[s, :s]))
        y_new = y + h * (K[:6].T @ _B)
        prob.check(y_new)
        K[6] = prob.rhs(y_new)
        return y_new, K

    @staticmethod
    def error(K, h):
        return h * (K.T @ _E)

    @staticmethod
    def interpolant(y, y_new, K, h):
        Q = K.T @ _P

        def at(theta):
            return y + h * (Q @ np.cumprod(np.full(4, theta)))

        return at


class _RK4:
    order = 4

    @staticmethod
    def step(prob, y, f0, h):
        k2 = prob.f(y + 0.5 * h * f0)
        k3 = prob.f(y + 0.5 * h * k2)
        k4 = prob.f(y + h * k3)
        y_new = y + h / 6.0 * (f0 + 2.0 * k2 + 2.0 * k3 + k4)
        prob.check(y_new)
        return y_new, np.array([f0, prob.rhs(y_new)])

    @staticmethod
    def interpolant(y, y_new, K, h):
        f0, f1 = K

        def at(theta):
            # cubic Hermite
            t2, t3 = theta * theta, theta ** 3
            return ((2 * t3 - 3 * t2 + 1) * y + (t3 - 2 * t2 + theta) * h * f0
                    + (-2 * t3 + 3 * t2) * y_new + (t3 - t2) * h * f1)

        return at


def _finite(v):
    return bool(np.all(np.isfinite(v)))


def _locate_crossing(prob, interp, y, y_new, h, tol):
    """Earliest surface crossing inside the step as ``(theta, surface_index)`` or ``None``."""
    best = None
    for idx, g in enumerate(prob.kinks):
        m = prob.n if idx < prob.n_kinks else y.size
        g0 = g(y[:m])
        g1 = g(y_new[:m])
        if g0 == 0.0 or g0 * g1 >= 0.0:
            continue
        lo, hi = 0.0, 1.0
        while (hi - lo) * h > tol:
            mid = 0.5 * (lo + hi)
            if g(interp(mid)[:m]) * g0 > 0.0:
                lo = mid
            else:
                hi = mid
        if best is None or hi < best[0]:
            best = (hi, idx)
    return best


class _Recorder:
    def __init__(self, t0, y0, f0, sample_dt, store=True):
        self.store = store
        self.sample_dt = sample_dt
        self.t0 = t0
        self.times = [t0]
        self.states = [y0]
        self.derivs = [f0] if sample_dt is None else None
        self.k_next = 1

    def add_step(self, t, h, y_new, f_new, interp):
        if not self.store:
            self.times[-1], self.states[-1] = t + h, y_new
            return
        if self.sample_dt is None:
            self.times.append(t + h)
            self.states.append(y_new)
            self.derivs.append(f_new)
            return
        t_new = t + h
        while True:
            tk = self.t0 + self.k_next * self.sample_dt
            if tk > t_new:
                break
            self.times.append(tk)
            self.states.append(interp((tk - t) / h) if tk < t_new else y_new)
            self.k_next += 1

    def finish(self, t, y):
        if self.sample_dt is not None and self.store and t > self.times[-1]:
            self.times.append(t)
            self.states.append(y)


def solve(rhs: Callable, y0, t0: float, t1: float, cfg: IntegratorConfig, *, n: int | None = None,
          guard_radius: float = 0.0, kinks=(), stops=(), h0: float | None = None, store: bool = True):
    """Integrate ``y' = rhs(y)`` on ``[t0, t1]``; the engine behind :func:`integrate`.

    Guard and kink tests see only the first ``n`` components, so augmented
    systems (state plus tangent vectors) can reuse the machinery. ``stops``
    are surfaces like ``kinks`` but end the run (``Completed``) at the
    first crossing; they see the full state vector. Returns the
    :class:`Trajectory` and the last step size (to warm-start the next segment).
    """
    y = np.array(y0, dtype=float)
    n = y.size if n is None else n
    prob = _Problem(rhs, n, guard_radius, kinks, stops)
    method = _DP45 if cfg.method == "rk45" else _RK4
    adaptive = method is _DP45

    with np.errstate(all="ignore"):
        try:
            f = prob.f(y)
        except _Unsafe:
            raise SingularPointError("initial state", y[:n]) from None
        if not (_finite(y) and _finite(f)):
            raise NonFiniteStateError(f"non-finite initial state/derivative at t={t0}")

        rec = _Recorder(t0, y, f, cfg.sample_dt, store)
        events = []
        status = Termination.COMPLETED
        message = ""
        t = t0
        accepted = rejected = 0
        h_min = math.inf
        h_max = 0.0
        h_sum = 0.0
        if adaptive:
            h = h0 if h0 else _initial_step(prob, y, f, cfg, t1 - t0)
        else:
            h = cfg.dt
        k_grid = 0  # fixed-step grid index

        while t < t1:
            if accepted >= cfg.max_steps:
                status = Termination.STEP_LIMIT
                message = f"max_steps={cfg.max_steps} exhausted at t={t}"
                break
            if adaptive:
                h = min(h, cfg.max_step, t1 - t)
            else:
                t_next = min(t0 + (k_grid + 1) * cfg.dt, t1)
                h = t_next - t
            if h <= 0.0:
                break
            err = 0.0
            event = None
            try:
                y_new, K = method.step(prob, y, f, h)
                if adaptive:
                    scale = cfg.abs_tol + np.maximum(np.abs(y), np.abs(y_new)) * cfg.rel_tol
                    err = _rms(method.error(K, h) / scale)
                if not adaptive or (math.isfinite(err) and err <= 1.0):
                    interp = method.interpolant(y, y_new, K, h)
                    hit = _locate_crossing(prob, interp, y, y_new, h, cfg.event_tol) if prob.kinks else None
                    if hit is not None:
                        theta, idx = hit
                        if theta * h > cfg.event_tol:
                            # split: retake the step so it ends on the kink surface
                            h = theta * h
                            y_new, K = method.step(prob, y, f, h)
                            interp = method.interpolant(y, y_new, K, h)
                            event = (t + h, idx)
                        elif not events or events[-1][0] != t:
                            event = (t, idx)
            except _Unsafe:
                # adaptive: creep up to the ball; stop once the state is within 2 guard radii
                r = math.sqrt(float(y[:n] @ y[:n]))
                if adaptive and r > 2.0 * guard_radius and h > 1e-15 * max(1.0, abs(t)):
                    rejected += 1
                    h *= 0.5
                    continue
                status = Termination.SINGULARITY_REACHED
                message = f"singular guard ball (r < {guard_radius:g}) reached at t={t}, r={r:.3g}"
                break

            if adaptive and not (math.isfinite(err) and err <= 1.0):
                rejected += 1
                h *= 0.25 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
                if h < 1e-15 * max(1.0, abs(t)):
                    if not math.isfinite(err):
                        trj = _assemble(rec, status, accepted, rejected, h_min, h_sum, h_max, events, "")
                        raise NonFiniteStateError(f"non-finite state near t={t}", trj)
                    status = Termination.STEP_LIMIT
                    message = f"step size underflow at t={t}"
                    break
                continue
            if not (_finite(y_new) and _finite(K[-1])):
                trj = _assemble(rec, status, accepted, rejected, h_min, h_sum, h_max, events, "")
                raise NonFiniteStateError(f"non-finite state near t={t}", trj)
            stop = False
            if event is not None:
                events.append(event)
                stop = event[1] >= prob.n_kinks

            rec.add_step(t, h, y_new, K[-1], interp)
            accepted += 1
            h_min = min(h_min, h)
            h_max = max(h_max, h)
            h_sum += h
            if not adaptive and h == t_next - t:
                k_grid += 1
                t = t_next
            else:
                t = t + h
            y, f = y_new, K[-1]
            if adaptive:
                h *= min(5.0, max(0.2, 0.9 * max(err, 1e-10) ** -0.2))
            if stop:
                message = f"stop surface {event[1] - prob.n_kinks} crossed at t={t}"
                break

        rec.finish(t, y)
        trj = _assemble(rec, status, accepted, rejected, h_min, h_sum, h_max, events, message)
    return trj, h


def _assemble(rec, status, accepted, rejected, h_min, h_sum, h_max, events, message):
    stats = {
        "accepted": accepted,
        "rejected": rejected,
        "min": h_min if accepted else None,
        "mean": h_sum / accepted if accepted else None,
        "max": h_max if accepted else None,
    }
    derivs = np.array(rec.derivs) if rec.derivs is not None else None
    return Trajectory(
        times=np.array(rec.times),
        states=np.array(rec.states),
        termination=status,
        step_stats=stats,
        derivs=derivs,
        events=list(events),
        message=message,
    )


def _initial_step(prob, y, f, cfg, span):
    scale = cfg.abs_tol + np.abs(y) * cfg.rel_tol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    try:
        f1 = prob.f(y + h0 * f)
    except _Unsafe:
        return h0 * 1e-3
    d2 = _rms((f1 - f) / scale) / h0
    if not math.isfinite(d2):
        return h0 * 1e-3
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5)
    return min(100 * h0, h1, span)


def integrate(sys: SystemDef, p0, cfg: IntegratorConfig | None = None, *, t0: float = 0.0) -> Trajectory:
    """Integrate ``sys`` from ``p0`` over ``[t0, t0 + cfg.t_end]``.

    Raises
    ------
    SingularPointError
        If ``p0`` lies in the system's singular set (or inside the guard ball).
    NonFiniteStateError
        On overflow/NaN; the partial trajectory is attached.
    """
    cfg = cfg or IntegratorConfig()
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (sys.dim,):
        raise ConfigError(f"{sys.name} expects a {sys.dim}-component state, got shape {p0.shape}")
    if sys.in_singular_set(p0):
        raise SingularPointError(sys.name, p0)
    guard = cfg.singular_guard if sys.has_singular_set else 0.0
    try:
        trj, _ = solve(sys.rhs, p0, t0, t0 + cfg.t_end, cfg, guard_radius=guard, kinks=sys.kink_surfaces)
    except SingularPointError:
        raise SingularPointError(sys.name, p0) from None
    return trj


def _ladder_job(args):
    level, sys, p0, cfg = args
    try:
        return integrate(sys, p0, cfg)
    except Exception as exc:  # noqa: BLE001 - re-raised with the level tag
        raise LadderLevelError(level, exc) from exc


def refinement_ladder(sys: SystemDef, p0, base_cfg: IntegratorConfig, levels: int = 3,
                      workers: int = 1) -> list[Trajectory]:
    """Integrate at ``levels`` successively refined settings (same ``t_end``).

    Fixed-step runs halve ``dt`` per rung; adaptive runs tighten both
    tolerances tenfold. The "higher precision" rung is realized by the
    tighter tolerances, not by extended-precision arithmetic.
    """
    if levels < 2:
        raise ConfigError("a refinement ladder needs at least 2 levels")
    jobs = [(k, sys, p0, base_cfg.refined(k)) for k in range(levels)]
    return list(_parallel_map(_ladder_job, jobs, workers))


def _parallel_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def resample_uniform(trj: Trajectory, dt: float, t_start: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of every state component onto ``t_start + k*dt``."""
    t_start = trj.times[0] if t_start is None else t_start
    grid = np.arange(t_start, trj.times[-1] + 0.5 * dt * 1e-9, dt)
    grid = grid[grid <= trj.times[-1]]
    cols = [np.interp(grid, trj.times, trj.states[:, i]) for i in range(trj.states.shape[1])]
    return grid, np.column_stack(cols)
