"""Numerical checks that the singular planar CDK field and its polynomial
regularization share orbits away from the origin.

The regularized field equals ``r^2`` times the singular one, so both trace
the same curves with time reparametrized by ``dtau/dt = 1/r^2``. The checks
here compare the fields pointwise, the orbits as point sets, the equilibria
inside an annulus, and the 3D model against its planar reduction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar, root
from scipy.spatial.distance import directed_hausdorff

from .errors import ChaosTriageError, ConfigError, NonFiniteStateError, SingularPointError
from .integrate import IntegratorConfig, Trajectory, integrate, solve, write_columns_csv, write_json
from .systems import _regularized_jac, cylindrical_project, eval_regularized, make_system

ARC_SAMPLES = 1000
ZERO_SEED_GRID = 200
ZERO_MATCH_TOL = 1e-8
# fewer accepted steps than this inside the annulus counts as an immediate exit
IMMEDIATE_EXIT_STEPS = 10


@dataclass(frozen=True)
class AnnulusSpec:
    r0: float
    r1: float

    def __post_init__(self):
        if not 0 < self.r0 < self.r1:
            raise ConfigError(f"annulus needs 0 < r0 < r1, got ({self.r0}, {self.r1})")

    def contains(self, p) -> bool:
        r = math.hypot(*p)
        return self.r0 <= r <= self.r1


def scale_identity_check(params, sample_points) -> float:
    """Max relative residual of ``regularized(p) - r^2 * singular(p)`` over the samples."""
    sys = make_system("cdk2d", **params)
    worst = 0.0
    for p in np.asarray(sample_points, dtype=float):
        reg = eval_regularized(p, sys.params)
        res = np.linalg.norm(reg - float(p @ p) * sys.field(p)) / max(1.0, float(np.linalg.norm(reg)))
        worst = max(worst, float(res))
    return worst


@dataclass
class EquivalenceReport:
    pointwise_max_residual: float
    orbit_hausdorff: float
    timescale_samples: list
    rho_min: float
    rho_max: float
    terminations: dict
    immediate_exit: bool = False
    reduction_fit: dict | None = None
    notes: list = field(default_factory=list)
    orbits: tuple | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("orbits")
        d["timescale_samples"] = [[list(map(float, p)), float(r)] for p, r in self.timescale_samples]
        return d

    def to_json(self, path) -> None:
        write_json(path, self.as_dict())

    def orbits_to_csv(self, path) -> None:
        """Both orbits, tagged 0 (singular field) and 1 (regularized field)."""
        if self.orbits is None:
            return
        a, b = self.orbits
        rows = [(0, *p) for p in a] + [(1, *p) for p in b]
        write_columns_csv(path, ["orbit", "x", "y"], rows)


def _arc_resample(pts: np.ndarray, m: int = ARC_SAMPLES) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return pts[:1].repeat(m, axis=0)
    u = np.linspace(0.0, s[-1], m)
    return np.column_stack([np.interp(u, s, pts[:, i]) for i in range(pts.shape[1])])


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def _annulus_stops(annulus: AnnulusSpec):
    r0sq, r1sq = annulus.r0 ** 2, annulus.r1 ** 2
    # positive inside the annulus
    return (lambda y: y[0] * y[0] + y[1] * y[1] - r0sq,
            lambda y: r1sq - y[0] * y[0] - y[1] * y[1])


def annulus_orbit_compare(params, annulus: AnnulusSpec, p0, horizon: float,
                          cfg: IntegratorConfig | None = None) -> EquivalenceReport:
    """Integrate both planar CDK fields from ``p0`` and compare their orbits inside ``annulus``.

    The singular field runs in its own time ``t`` for ``horizon``. The
    regularized field runs in ``tau`` with the clock ``dt/dtau = r^2``
    appended, stopping when the clock reaches ``horizon``, so both legs
    cover the same arc. Each leg also stops on leaving the annulus.
    """
    cfg = cfg or IntegratorConfig(abs_tol=1e-11, rel_tol=1e-11, max_step=0.01)
    p0 = np.asarray(p0, dtype=float)
    if not annulus.contains(p0):
        raise ConfigError(f"p0={tuple(p0)} is outside the annulus [{annulus.r0}, {annulus.r1}]")
    sing = make_system("cdk2d", **params)
    a, b = sing.params["a"], sing.params["b"]
    stops = _annulus_stops(annulus)

    leg1, _ = solve(sing.rhs, p0, 0.0, horizon, cfg, stops=stops)

    def reg_clock(u):
        x, y = u[0], u[1]
        return np.array([*eval_regularized(u[:2], sing.params), x * x + y * y])

    clock_stop = (lambda u: horizon - u[2],)
    # tau horizon: generous bound, the clock surface ends the run
    tau_max = horizon / annulus.r0 ** 2 * 1.01
    leg2, _ = solve(reg_clock, np.array([*p0, 0.0]), 0.0, tau_max, cfg, n=2, stops=stops + clock_stop)

    o1 = leg1.states
    o2 = leg2.states[:, :2]
    h = hausdorff(_arc_resample(o1), _arc_resample(o2))
    rho = np.einsum("ij,ij->i", o2, o2)
    step = max(1, len(o2) // 200)
    samples = [(tuple(o2[i]), float(rho[i])) for i in range(0, len(o2), step)]
    pts = np.concatenate([o1, o2])
    resid = 0.0
    for p in pts[:: max(1, len(pts) // 500)]:
        reg = eval_regularized(p, {"a": a, "b": b})
        resid = max(resid, float(np.linalg.norm(reg - float(p @ p) * sing.rhs(p))
                                 / max(1.0, float(np.linalg.norm(reg)))))
    immediate = min(leg1.step_stats["accepted"], leg2.step_stats["accepted"]) < IMMEDIATE_EXIT_STEPS and any(
        "stop surface 0" in m or "stop surface 1" in m for m in (leg1.message, leg2.message))
    notes = []
    if immediate:
        notes.append("orbit left the annulus within a few steps")
    return EquivalenceReport(
        pointwise_max_residual=resid,
        orbit_hausdorff=float(h),
        timescale_samples=samples,
        rho_min=float(rho.min()),
        rho_max=float(rho.max()),
        terminations={"singular": _leg_status(leg1), "regularized": _leg_status(leg2)},
        immediate_exit=immediate,
        notes=notes,
        orbits=(o1, o2),
    )


def _leg_status(trj: Trajectory) -> str:
    return f"{trj.termination.value}: {trj.message}" if trj.message else trj.termination.value


# -- equilibria ---------------------------------------------------------------

def _polish(f, jac, seeds, annulus):
    found = []
    for s in seeds:
        # convergence is judged by the residual; hybr flags "no further improvement" at round-off
        sol = root(f, s, jac=jac, method="hybr", options={"xtol": 1e-14})
        if not np.all(np.isfinite(sol.x)) or not annulus.contains(sol.x):
            continue
        if np.linalg.norm(f(sol.x)) > 1e-10:
            continue
        if all(np.linalg.norm(sol.x - q) > ZERO_MATCH_TOL for q in found):
            found.append(sol.x)
    return sorted((tuple(map(float, q)) for q in found))


def _sign_change_seeds(f, annulus, n):
    """Centres of grid cells touching the annulus where both field components change sign."""
    g = np.linspace(-annulus.r1, annulus.r1, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    R = np.hypot(X, Y)
    with np.errstate(all="ignore"):
        F = np.array([[f(np.array([x, y])) if r > 0 else (np.nan, np.nan) for x, y, r in zip(rx, ry, rr)]
                      for rx, ry, rr in zip(X, Y, R)])
    corners = [F[:-1, :-1], F[1:, :-1], F[:-1, 1:], F[1:, 1:]]
    lo = np.fmin.reduce(corners)
    hi = np.fmax.reduce(corners)
    change = np.all((lo <= 0) & (hi >= 0), axis=-1)
    Rc = [R[:-1, :-1], R[1:, :-1], R[:-1, 1:], R[1:, 1:]]
    touches = (np.fmax.reduce(Rc) >= annulus.r0) & (np.fmin.reduce(Rc) <= annulus.r1)
    cx = 0.5 * (X[:-1, :-1] + X[1:, 1:])
    cy = 0.5 * (Y[:-1, :-1] + Y[1:, 1:])
    keep = change & touches
    return np.column_stack([cx[keep], cy[keep]])


def equilibrium_zero_sets(params, annulus: AnnulusSpec, grid: int = ZERO_SEED_GRID) -> dict:
    """Equilibria of both fields inside the annulus, seeded from a grid and polished by a root solver."""
    sing = make_system("cdk2d", **params)
    pr = sing.params

    def freg(p):
        return eval_regularized(p, pr)

    def jreg(p):
        return _regularized_jac(p, pr["a"], pr["b"])

    z_sing = _polish(sing.rhs, sing.jac, _sign_change_seeds(sing.rhs, annulus, grid), annulus)
    z_reg = _polish(freg, jreg, _sign_change_seeds(freg, annulus, grid), annulus)
    match = len(z_sing) == len(z_reg) and all(
        np.linalg.norm(np.subtract(p, q)) <= ZERO_MATCH_TOL for p, q in zip(z_sing, z_reg))
    return {"singular": z_sing, "regularized": z_reg, "match": bool(match)}


# -- 3D model vs planar reduction ---------------------------------------------

def reduction_consistency(params3d, p0_3d, horizon: float, cfg: IntegratorConfig | None = None, *,
                          params2d=None, s_max: float = 4.0) -> dict:
    """Best constant time rescaling ``s`` matching the projected 3D orbit to the planar reduction.

    The 3D system is integrated for ``horizon``, projected to ``(r, z)`` and
    compared with the planar orbit evaluated at time ``s*t`` from the
    projected initial point. ``s`` is searched on ``[-s_max, s_max]``;
    negative values mean the planar orbit runs backwards. Planar parameters
    default to ``a = eps/lam`` and ``b = epsbar/lam``.
    """
    cfg = cfg or IntegratorConfig(abs_tol=1e-10, rel_tol=1e-10)
    sys3 = make_system("cdk3d", **(params3d or {}))
    lam, eps, epsbar = sys3.params["lam"], sys3.params["eps"], sys3.params["epsbar"]
    params2d = dict(params2d) if params2d else {"a": eps / lam, "b": epsbar / lam}
    sys2 = make_system("cdk2d", **params2d)
    p0_3d = np.asarray(p0_3d, dtype=float)

    dt = horizon / 400
    leg3 = _run_leg(sys3, p0_3d, replace(cfg, t_end=horizon, sample_dt=dt))
    out = {"params2d": params2d, "s": None, "residual": None,
           "legs": {"3d": _leg_status(leg3) if isinstance(leg3, Trajectory) else leg3}}
    if not isinstance(leg3, Trajectory):
        return out
    t3 = leg3.times
    rz3 = np.array([cylindrical_project(m) for m in leg3.states])
    q0 = rz3[0]
    fwd = _run_leg(sys2, q0, replace(cfg, t_end=horizon * s_max, sample_dt=dt / 4))
    bwd_sys = replace(sys2, rhs=_Negated(sys2.rhs))
    bwd = _run_leg(bwd_sys, q0, replace(cfg, t_end=horizon * s_max, sample_dt=dt / 4))
    out["legs"]["2d_forward"] = _leg_status(fwd) if isinstance(fwd, Trajectory) else fwd
    out["legs"]["2d_backward"] = _leg_status(bwd) if isinstance(bwd, Trajectory) else bwd

    def cost(s):
        leg = fwd if s >= 0 else bwd
        if not isinstance(leg, Trajectory):
            return math.inf
        ts = abs(s) * t3
        ok = ts <= leg.t_final
        if ok.sum() < 0.5 * len(t3):
            return math.inf
        x = np.interp(ts[ok], leg.times, leg.states[:, 0])
        z = np.interp(ts[ok], leg.times, leg.states[:, 1])
        # the planar x is a signed radius; compare magnitudes
        d = np.hypot(np.abs(x) - rz3[ok, 0], z - rz3[ok, 1])
        return float(np.sqrt(np.mean(d * d)))

    best = None
    for lo, hi in ((1e-3, s_max), (-s_max, -1e-3)):
        grid = np.linspace(lo, hi, 41)
        vals = [cost(s) for s in grid]
        k = int(np.argmin(vals))
        if not math.isfinite(vals[k]):
            continue
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(cost, bounds=(a, b), method="bounded", options={"xatol": 1e-8})
        cand = (float(res.fun), float(res.x)) if res.fun <= vals[k] else (float(vals[k]), float(grid[k]))
        if best is None or cand[0] < best[0]:
            best = cand
    if best is not None:
        out["residual"], out["s"] = best
    out["axis_orbit"] = bool(abs(q0[0]) == 0.0)
    return out


class _Negated:
    def __init__(self, f):
        self.f = f

    def __call__(self, p):
        return -self.f(p)


def _run_leg(sys, p0, cfg):
    try:
        return integrate(sys, p0, cfg)
    except NonFiniteStateError as exc:
        if exc.trajectory is not None and len(exc.trajectory) > 1:
            return exc.trajectory
        return f"Failed: {exc}"
    except (SingularPointError, ChaosTriageError) as exc:
        return f"Failed: {exc}"

