"""Parameter sweeps, period-doubling localization and Feigenbaum ratios.

Period multiplicity is counted as the number of value clusters among the
local maxima of one state component after the transient, the same reading
one takes off a bifurcation diagram by eye.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .diagnostics import CLUSTER_TOL, default_transient, detect_peaks
from .errors import (
    BadBracketError,
    ChaosTriageError,
    ConfigError,
    NonMonotoneError,
    TooFewError,
    UnresolvableError,
)
from .integrate import IntegratorConfig, Termination, _parallel_map, integrate, write_columns_csv, write_json
from .systems import SystemDef

# a sweep needs an interior point before a count jump can be read as one doubling
MIN_GRID_FOR_DOUBLINGS = 3


class Direction(str, Enum):
    DESCENDING = "descending"
    ASCENDING = "ascending"


class ICPolicy(str, Enum):
    FIXED = "fixed"
    CONTINUATION = "continuation"


@dataclass(frozen=True)
class SweepSpec:
    param_name: str
    lo: float
    hi: float
    grid_points: int
    p0: tuple
    direction: Direction = Direction.DESCENDING
    ic_policy: ICPolicy = ICPolicy.CONTINUATION
    fixed_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"sweep range needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "ic_policy", ICPolicy(self.ic_policy))
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))

    def grid(self) -> np.ndarray:
        g = np.linspace(self.lo, self.hi, self.grid_points)
        return g[::-1] if self.direction is Direction.DESCENDING else g


@dataclass
class SweepRow:
    value: float
    maxima: np.ndarray
    cluster_count: int
    termination: str
    error: str = ""


@dataclass
class Doubling:
    n: int
    value: float
    bracket: tuple
    count_hi: int
    count_lo: int

    @property
    def width(self) -> float:
        return self.bracket[1] - self.bracket[0]


@dataclass
class BifurcationDiagram:
    param_name: str
    rows: list = field(default_factory=list)
    doublings: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def counts(self) -> list:
        return [(r.value, r.cluster_count) for r in self.rows]

    def to_csv(self, path) -> None:
        """Long format: one ``(param, maximum)`` line per detected maximum."""
        rows = [(r.value, m) for r in self.rows for m in r.maxima]
        write_columns_csv(path, [self.param_name, "maximum"], rows)

    def doublings_dict(self) -> dict:
        ratios = dict(self.ratios)
        return {
            "param": self.param_name,
            "doublings": [
                {
                    "n": d.n,
                    "a_n": d.value,
                    "bracket": list(d.bracket),
                    "width": d.width,
                    "delta_n": ratios.get(d.n),
                }
                for d in self.doublings
            ],
            "warnings": list(self.warnings),
        }

    def write_doublings_json(self, path) -> None:
        write_json(path, self.doublings_dict())


# -- single-point evaluation -------------------------------------------------

def _count_at(sys: SystemDef, name: str, value: float, p0, cfg: IntegratorConfig,
              transient: float | None, cluster_tol: float, component: int):
    """Integrate at one parameter value; returns ``(row, final_state)``."""
    s = sys.with_params(**{name: value})
    tr = default_transient(cfg.t_end) if transient is None else transient
    try:
        trj = integrate(s, p0, cfg)
    except ChaosTriageError as exc:
        return SweepRow(value, np.empty(0), 0, "Failed", str(exc)), None
    err = ""
    if trj.termination is not Termination.COMPLETED:
        err = trj.message
    if trj.t_final <= tr:
        return SweepRow(value, np.empty(0), 0, trj.termination.value,
                        err or f"run ended at t={trj.t_final} inside the transient"), trj.final_state
    try:
        pk = detect_peaks(trj, component=component, transient=tr, cluster_tol=cluster_tol)
    except ChaosTriageError as exc:
        return SweepRow(value, np.empty(0), 0, trj.termination.value, err or str(exc)), trj.final_state
    return SweepRow(value, pk.maxima_values, pk.count, trj.termination.value, err), trj.final_state


def _count_job(args):
    return _count_at(*args)[0]


def sweep(sys: SystemDef, spec: SweepSpec, cfg: IntegratorConfig | None = None, *,
          transient: float | None = None, cluster_tol: float = CLUSTER_TOL, component: int = 1,
          workers: int = 1) -> BifurcationDiagram:
    """Maxima and cluster counts over a parameter grid.

    Under ``Continuation`` each run starts from the final state of the
    previous one (sequential); ``Fixed`` runs are independent and can use
    ``workers`` processes. Failures are recorded in their row. Rows come
    back sorted by parameter value.
    """
    if sys.dim != 2:
        raise ConfigError(f"sweeps are defined for planar systems; {sys.name} has dim {sys.dim}")
    cfg = cfg or IntegratorConfig()
    base = sys.with_params(**spec.fixed_params) if spec.fixed_params else sys
    if spec.param_name not in base.params:
        raise ConfigError(f"{sys.name} has no parameter {spec.param_name!r}")
    grid = spec.grid()
    if spec.ic_policy is ICPolicy.FIXED:
        jobs = [(base, spec.param_name, float(v), spec.p0, cfg, transient, cluster_tol, component) for v in grid]
        rows = _parallel_map(_count_job, jobs, workers)
    else:
        rows = []
        p = np.array(spec.p0)
        for v in grid:
            row, final = _count_at(base, spec.param_name, float(v), p, cfg, transient, cluster_tol, component)
            rows.append(row)
            if final is not None and row.termination == Termination.COMPLETED.value and np.all(np.isfinite(final)):
                p = np.array(final)
    rows.sort(key=lambda r: r.value)
    return BifurcationDiagram(spec.param_name, rows)


# -- doubling localization ---------------------------------------------------

def bisection_tol(n: int) -> float:
    """Bracket tolerance for the n-th doubling; gaps shrink roughly by 4.7 per level."""
    if n <= 2:
        return 5e-3
    if n <= 4:
        return 1e-3
    if n <= 6:
        return 2e-4
    return 2e-4 / 4.669 ** (n - 6)


def localize_doubling(sys: SystemDef, a_hi: float, a_lo: float, target_count: int, tol: float | None = None, *,
                      p0, cfg: IntegratorConfig | None = None, param_name: str = "a",
                      transient: float | None = None, cluster_tol: float = CLUSTER_TOL,
                      component: int = 1, scale_horizon: bool = True) -> Doubling:
    """Bisect ``[a_lo, a_hi]`` on the cluster count until the bracket is narrower than ``tol``.

    The count must be ``target_count/2`` at ``a_hi`` and at least
    ``target_count`` at ``a_lo``. With ``scale_horizon`` the integration
    horizon doubles with each doubling level, since deeper doublings need
    longer transients to settle.
    """
    if target_count < 2 or target_count & (target_count - 1):
        raise ConfigError(f"target_count must be a power of two >= 2, got {target_count}")
    n = int(math.log2(target_count))
    tol = bisection_tol(n) if tol is None else tol
    cfg = cfg or IntegratorConfig()
    if scale_horizon and n > 1:
        cfg = replace(cfg, t_end=cfg.t_end * 2 ** (n - 1))
    half = target_count // 2
    if not a_lo < a_hi:
        raise BadBracketError(f"need a_lo < a_hi, got [{a_lo}, {a_hi}]")

    def count(v):
        return _count_at(sys, param_name, v, p0, cfg, transient, cluster_tol, component)[0]

    r_hi, r_lo = count(a_hi), count(a_lo)
    if r_hi.cluster_count != half or r_lo.cluster_count < target_count:
        raise BadBracketError(
            f"bracket [{a_lo}, {a_hi}] has counts ({r_lo.cluster_count}, {r_hi.cluster_count}); "
            f"need (>= {target_count}, {half})"
            + (f"; {r_hi.error or r_lo.error}" if r_hi.error or r_lo.error else ""))
    lo, hi = a_lo, a_hi
    c_lo = r_lo.cluster_count
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        c = count(mid).cluster_count
        if c == half:
            hi = mid
        elif c >= target_count:
            lo, c_lo = mid, c
        else:
            raise UnresolvableError(
                f"count {c} at {param_name}={mid} is neither {half} nor >= {target_count}; "
                f"achieved width {hi - lo:.3g}", bracket=(lo, hi))
    return Doubling(n, 0.5 * (lo + hi), (lo, hi), half, c_lo)


def find_doublings(diagram: BifurcationDiagram, sys: SystemDef, *, p0, cfg: IntegratorConfig | None = None,
                   max_n: int = 6, transient: float | None = None, cluster_tol: float = CLUSTER_TOL,
                   component: int = 1) -> BifurcationDiagram:
    """Localize every doubling bracketed by adjacent sweep rows and attach ratios.

    Brackets are read off the sweep from high to low parameter: the first
    pair of neighbours whose counts go from ``2^(n-1)`` to ``>= 2^n``.
    """
    rows = sorted(diagram.rows, key=lambda r: -r.value)
    if len(rows) < MIN_GRID_FOR_DOUBLINGS:
        msg = f"{len(rows)} grid points cannot bracket a doubling; need >= {MIN_GRID_FOR_DOUBLINGS}"
        diagram.warnings.append(msg)
        return diagram
    found = []
    for n in range(1, max_n + 1):
        half, target = 2 ** (n - 1), 2 ** n
        bracket = next(((lo.value, hi.value) for hi, lo in zip(rows, rows[1:])
                        if hi.cluster_count == half and lo.cluster_count >= target), None)
        if bracket is None:
            diagram.warnings.append(f"no sweep bracket for doubling n={n} ({half} -> {target})")
            break
        try:
            found.append(localize_doubling(sys, bracket[1], bracket[0], target, p0=p0, cfg=cfg,
                                           param_name=diagram.param_name, transient=transient,
                                           cluster_tol=cluster_tol, component=component))
        except (BadBracketError, UnresolvableError) as exc:
            diagram.warnings.append(f"doubling n={n}: {exc}")
            break
    diagram.doublings = found
    if len(found) >= 3:
        deltas = feigenbaum_ratios([d.value for d in found])
        diagram.ratios = [(n, d) for n, d in zip(range(3, len(found) + 1), deltas)]
    if not found:
        diagram.warnings.append("no doublings localized")
    return diagram


def feigenbaum_ratios(a_values) -> list:
    """``delta_n = (a_{n-1} - a_{n-2}) / (a_n - a_{n-1})`` for n = 3, 4, ...

    >>> [round(d, 12) for d in feigenbaum_ratios([1.0, 2.0, 3.0])]
    [1.0]
    """
    a = [float(v) for v in a_values]
    if len(a) < 3:
        raise TooFewError(f"need at least 3 doubling values, got {len(a)}")
    steps = [y - x for x, y in zip(a, a[1:])]
    if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
        raise NonMonotoneError("doubling values must be strictly monotone")
    return [steps[k - 1] / steps[k] for k in range(1, len(steps))]
