"""Vector fields of the singular, regularized, nonsmooth and oracle systems.

Every system is a :class:`SystemDef`: a frozen bundle of a right-hand side,
its analytic Jacobian, the radius of the singular ball (if any), the kink
surfaces where the field is only Lipschitz, and a linear involution under
which the field is equivariant.

Right-hand sides are module-level functions bound to parameters with
:func:`functools.partial`, so systems pickle cleanly into worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, SingularPointError

# Radius of the ball around the origin treated as singular.
SINGULAR_EPS = 1e-6

# phi-dot of the planar CDK reduction. Carried for completeness; the angle
# decouples and never enters a diagnostic.
CDK2D_ANGULAR_RATE = 1.0


# -- right-hand sides and Jacobians ----------------------------------------

def _cdk3d_rhs(m, lam, eps, epsbar):
    mx, my, mz = m
    R = mx * mx + my * my + mz * mz
    return np.array([
        my - lam * mx * mz / R - eps * mx,
        -mx - lam * my * mz / R - eps * my,
        lam * mz * mz / R - epsbar * mz - (lam - epsbar),
    ])


def _cdk3d_jac(m, lam, eps, epsbar):
    m = np.asarray(m, dtype=float)
    mx, my, mz = m
    R = float(m @ m)
    J = np.zeros((3, 3))
    # d/dm_k of lam*u*mz/R for u = mx, my
    for row, u in ((0, mx), (1, my)):
        grad = -2.0 * lam * u * mz / (R * R) * m
        grad[row] += lam * mz / R
        grad[2] += lam * u / R
        J[row] = -grad
    J[0, 0] -= eps
    J[0, 1] += 1.0
    J[1, 0] -= 1.0
    J[1, 1] -= eps
    grad3 = -2.0 * lam * mz * mz / (R * R) * m
    grad3[2] += 2.0 * lam * mz / R
    J[2] = grad3
    J[2, 2] -= epsbar
    return J


def _cdk2d_rhs(p, a, b):
    x, z = p
    r2 = x * x + z * z
    return np.array([x * z / r2 - a * x, z * z / r2 - b * z + b - 1.0])


def _cdk2d_jac(p, a, b):
    x, z = p
    r2 = x * x + z * z
    r4 = r2 * r2
    return np.array([
        [z / r2 - 2.0 * x * x * z / r4 - a, x / r2 - 2.0 * x * z * z / r4],
        [-2.0 * z * z * x / r4, 2.0 * z / r2 - 2.0 * z ** 3 / r4 - b],
    ])


def _regularized_rhs(p, a, b):
    x, y = p
    r2 = x * x + y * y
    return np.array([x * y - a * (x ** 3 + x * y * y), y * y - (b * y - b + 1.0) * r2])


def _regularized_jac(p, a, b):
    x, y = p
    lin = b * y - b + 1.0
    return np.array([
        [y - 3.0 * a * x * x - a * y * y, x - 2.0 * a * x * y],
        [-2.0 * x * lin, 2.0 * y - b * (x * x + y * y) - 2.0 * y * lin],
    ])


def _nonsmooth_rhs(p, a, b):
    x, y = p
    r2 = x * x + y * y
    return np.array([x * y / r2, y * y / r2 - a * y - b * abs(x)])


def _nonsmooth_jac(p, a, b):
    # d|x|/dx = sign(x), sign(0) = 0; valid almost everywhere
    x, y = p
    r2 = x * x + y * y
    r4 = r2 * r2
    return np.array([
        [y / r2 - 2.0 * x * x * y / r4, x / r2 - 2.0 * x * y * y / r4],
        [-2.0 * y * y * x / r4 - b * np.sign(x), 2.0 * y / r2 - 2.0 * y ** 3 / r4 - a],
    ])


def _linear_rhs(p, a, b):
    return np.array([-a * p[0], -b * p[1]])


def _linear_jac(p, a, b):
    return np.array([[-a, 0.0], [0.0, -b]])


def _rotation_rhs(p, omega):
    return np.array([omega * p[1], -omega * p[0]])


def _rotation_jac(p, omega):
    return np.array([[0.0, omega], [-omega, 0.0]])


def _first_coordinate(p):
    return p[0]


# -- system definition ------------------------------------------------------

@dataclass(frozen=True)
class SystemDef:
    """A named, parameterized autonomous vector field.

    Attributes
    ----------
    name : str
        Registry key, e.g. ``"nonsmooth-abs"``.
    dim : int
        State dimension (2 or 3).
    param_items : tuple of (str, float)
        Parameter values, frozen; read them through :attr:`params`.
    rhs, jac : callable
        ``rhs(p) -> (dim,)`` and ``jac(p) -> (dim, dim)`` with parameters bound.
        Neither checks the singular set; use :meth:`field` for a checked call.
    singular_radius : float or None
        States with ``|p| < singular_radius`` are singular. ``None`` means the
        field is globally defined.
    kink_surfaces : tuple of callable
        Scalar functions whose zero sets are non-differentiability surfaces.
    symmetry : ndarray or None
        Linear involution ``S`` with ``F(S p) = S F(p)``.
    counterpart : str or None
        Name of a regularized system sharing orbits off the singular set.
    """

    name: str
    dim: int
    param_items: tuple
    # name and parameters determine both callables
    rhs: Callable = field(compare=False)
    jac: Callable = field(compare=False)
    singular_radius: float | None = None
    kink_surfaces: tuple = ()
    symmetry: np.ndarray | None = field(default=None, compare=False)
    counterpart: str | None = None

    @property
    def params(self) -> dict:
        return dict(self.param_items)

    @property
    def has_singular_set(self) -> bool:
        return self.singular_radius is not None

    def singular_distance(self, p) -> float:
        """Distance to the singular point, ``inf`` for globally defined fields."""
        if self.singular_radius is None:
            return math.inf
        return float(np.linalg.norm(p))

    def in_singular_set(self, p) -> bool:
        return self.singular_distance(p) < (self.singular_radius or 0.0)

    def field(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.in_singular_set(p):
            raise SingularPointError(self.name, p)
        return self.rhs(p)

    def jacobian(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.in_singular_set(p):
            raise SingularPointError(self.name, p)
        return self.jac(p)

    def reflect(self, p) -> np.ndarray:
        if self.symmetry is None:
            raise ValueError(f"{self.name} declares no symmetry")
        return self.symmetry @ np.asarray(p, dtype=float)

    def with_params(self, **overrides) -> "SystemDef":
        radius = SINGULAR_EPS if self.singular_radius is None else self.singular_radius
        return make_system(self.name, singular_radius=radius, **{**self.params, **overrides})

    def with_singular_radius(self, radius: float | None) -> "SystemDef":
        if self.singular_radius is None:
            return self
        return replace(self, singular_radius=radius)


@dataclass(frozen=True)
class _Entry:
    dim: int
    defaults: Mapping[str, float]
    rhs: Callable
    jac: Callable
    singular: bool
    symmetry: tuple
    kinks: tuple = ()
    counterpart: str | None = None
    positive: tuple = ()


_REGISTRY = {
    "cdk3d": _Entry(3, {"lam": 1.0, "eps": 0.6, "epsbar": 0.7}, _cdk3d_rhs, _cdk3d_jac,
                    singular=True, symmetry=(-1.0, -1.0, 1.0)),
    "cdk2d": _Entry(2, {"a": 0.6, "b": 0.7}, _cdk2d_rhs, _cdk2d_jac,
                    singular=True, symmetry=(-1.0, 1.0), counterpart="cdk-regularized"),
    "cdk-regularized": _Entry(2, {"a": 0.6, "b": 0.7}, _regularized_rhs, _regularized_jac,
                              singular=False, symmetry=(-1.0, 1.0)),
    "nonsmooth-abs": _Entry(2, {"a": 10.0, "b": 10.0}, _nonsmooth_rhs, _nonsmooth_jac,
                            singular=True, symmetry=(-1.0, 1.0),
                            kinks=(_first_coordinate,), positive=("a", "b")),
    # oracles: x' = -a x, y' = -b y and a rigid rotation at angular speed omega
    "linear-test": _Entry(2, {"a": 1.0, "b": 2.0}, _linear_rhs, _linear_jac, singular=False,
                          symmetry=(-1.0, -1.0)),
    "rotation-test": _Entry(2, {"omega": 1.0}, _rotation_rhs, _rotation_jac, singular=False,
                            symmetry=(-1.0, -1.0)),
}

SYSTEM_NAMES = tuple(_REGISTRY)


def make_system(name: str, singular_radius: float = SINGULAR_EPS, **params) -> SystemDef:
    """Build a registered system, overriding default parameters by keyword.

    >>> make_system("nonsmooth-abs", a=9.65).params
    {'a': 9.65, 'b': 10.0}
    """
    try:
        entry = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}") from None
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ConfigError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    values = {k: float(params.get(k, v)) for k, v in entry.defaults.items()}
    for k, v in values.items():
        if not math.isfinite(v):
            raise ConfigError(f"{name}: parameter {k}={v} is not finite")
        if k in entry.positive and v <= 0:
            raise ConfigError(f"{name}: parameter {k} must be > 0, got {v}")
    return SystemDef(
        name=name,
        dim=entry.dim,
        param_items=tuple(values.items()),
        rhs=partial(entry.rhs, **values),
        jac=partial(entry.jac, **values),
        singular_radius=singular_radius if entry.singular else None,
        kink_surfaces=entry.kinks,
        symmetry=np.diag(entry.symmetry),
        counterpart=entry.counterpart,
    )


def eval_field(sys: SystemDef, p: Sequence[float]) -> np.ndarray:
    """Right-hand side of ``sys`` at ``p``; raises SingularPointError in the singular ball."""
    return sys.field(p)


def eval_regularized(p: Sequence[float], params: Mapping[str, float]) -> np.ndarray:
    """Polynomial CDK field ``(xy - a(x^3 + xy^2), y^2 - (by - b + 1)(x^2 + y^2))``."""
    return _regularized_rhs(np.asarray(p, dtype=float), float(params["a"]), float(params["b"]))


def cylindrical_project(m: Sequence[float]) -> tuple[float, float]:
    """Map a 3D magnetization to ``(sqrt(mx^2 + my^2), mz)``."""
    mx, my, mz = (float(v) for v in m)
    return math.hypot(mx, my), mz
