"""Three-check triage of apparent chaos: refinement, regularization, indicators.

Each check ends in Pass, Fail or NotApplicable with a reason and its
numbers. The verdict is a pure function of the three outcomes:

============  ==================  ===========  ============
refinement    regularization      indicators   verdict
============  ==================  ===========  ============
Pass          Pass / NA           Pass         Genuine
any           any                 Pass         Spurious (if refinement or regularization Fail)
Pass          any                 Fail         NotChaotic
Fail          any                 Fail         Inconclusive
============  ==================  ===========  ============
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .diagnostics import (
    BROADBAND_FLATNESS,
    BROADBAND_PEAK_FRACTION,
    DRIFT_TOL,
    GS_INTERVAL,
    default_transient,
    kaplan_yorke,
    lyapunov_spectrum,
    power_spectrum,
)
from .errors import ChaosTriageError
from .integrate import IntegratorConfig, Termination, _parallel_map, to_jsonable, write_json
from .systems import SystemDef, make_system


class CheckStatus(str, Enum):
    PASS = "Pass"
    FAIL = "Fail"
    NOT_APPLICABLE = "NotApplicable"


class Verdict(str, Enum):
    GENUINE = "Genuine"
    SPURIOUS = "Spurious"
    NOT_CHAOTIC = "NotChaotic"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class CheckResult:
    status: CheckStatus
    reason: str = ""
    evidence: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Thresholds:
    lambda_min: float = 0.1
    refinement_agreement: float = 0.1
    flatness_min: float = BROADBAND_FLATNESS
    peak_fraction_max: float = BROADBAND_PEAK_FRACTION
    drift_tol: float = DRIFT_TOL
    gs_interval: float = GS_INTERVAL
    ladder_levels: int = 3


def verdict(refinement: CheckStatus, regularization: CheckStatus, indicators: CheckStatus) -> Verdict:
    """Combine the three check outcomes; see the module table."""
    refinement, regularization, indicators = (CheckStatus(s) for s in (refinement, regularization, indicators))
    if refinement is CheckStatus.NOT_APPLICABLE or indicators is CheckStatus.NOT_APPLICABLE:
        raise ValueError("refinement and indicator checks always apply")
    if indicators is CheckStatus.PASS:
        if refinement is CheckStatus.FAIL or regularization is CheckStatus.FAIL:
            return Verdict.SPURIOUS
        return Verdict.GENUINE
    if refinement is CheckStatus.PASS:
        return Verdict.NOT_CHAOTIC
    return Verdict.INCONCLUSIVE


@dataclass
class DiagnosticReport:
    system: str
    checks: dict
    verdict: Verdict
    thresholds_used: dict
    unevaluated: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def evidence(self) -> dict:
        return {k: c.evidence for k, c in self.checks.items()}

    def as_dict(self) -> dict:
        return {
            "system": self.system,
            "verdict": self.verdict.value,
            "checks": {k: {"status": c.status.value, "reason": c.reason, "evidence": to_jsonable(c.evidence)}
                       for k, c in self.checks.items()},
            "thresholds_used": self.thresholds_used,
            "unevaluated": self.unevaluated,
            "warnings": self.warnings,
        }

    def to_json(self, path) -> None:
        write_json(path, self.as_dict())

    def to_text(self) -> str:
        lines = [f"system: {self.system}", f"verdict: {self.verdict.value}", ""]
        for name, c in self.checks.items():
            lines.append(f"[{c.status.value}] {name}: {c.reason}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        for u in self.unevaluated:
            lines.append(f"not evaluated: {u}")
        return "\n".join(lines) + "\n"


def _lyap_job(args):
    sys, p0, cfg, gs, transient = args
    try:
        return lyapunov_spectrum(sys, p0, cfg, gs, transient)
    except ChaosTriageError as exc:
        return exc


def _indicator_check(sys: SystemDef, res, th: Thresholds, transient: float) -> CheckResult:
    if isinstance(res, Exception):
        return CheckResult(CheckStatus.FAIL, f"integration failed: {res}", {"error": str(res)})
    lam = res.exponents
    ev = {"lyapunov": res.as_dict()}
    reasons = []
    if res.termination is not Termination.COMPLETED:
        reasons.append(f"run ended early ({res.termination.value} at t={res.trajectory.t_final:.6g})")
    lam1 = float(lam[0])
    if not lam1 > th.lambda_min:
        reasons.append(f"lambda1={lam1:.4g} <= {th.lambda_min}")
    try:
        ky = kaplan_yorke(lam)
    except ChaosTriageError as exc:
        ky = float("nan")
        reasons.append(f"Kaplan-Yorke undefined: {exc}")
    ev["kaplan_yorke"] = ky
    lo, hi = sys.dim - 1, sys.dim
    if not lo < ky < hi:
        reasons.append(f"Kaplan-Yorke dimension {ky:.4g} outside ({lo}, {hi})")
    try:
        spec = power_spectrum(res.trajectory, component=sys.dim - 1, transient=transient)
        ev["spectral_flatness"] = spec.spectral_flatness
        ev["peak_fraction"] = spec.peak_fraction
        if not spec.is_broadband(th.flatness_min, th.peak_fraction_max):
            reasons.append(f"spectrum not broadband (flatness {spec.spectral_flatness:.3g}, "
                           f"peak fraction {spec.peak_fraction:.3g})")
    except ChaosTriageError as exc:
        reasons.append(f"spectrum unavailable: {exc}")
    if reasons:
        return CheckResult(CheckStatus.FAIL, "; ".join(reasons), ev)
    return CheckResult(CheckStatus.PASS, f"lambda1={lam1:.4g}, D_KY={ky:.4g}, broadband", ev)


def _refinement_check(levels: list, th: Thresholds) -> CheckResult:
    ev = {"levels": []}
    for k, r in enumerate(levels):
        if isinstance(r, Exception):
            ev["levels"].append({"level": k, "error": str(r)})
        else:
            ev["levels"].append({"level": k, "lambda1": float(r.exponents[0]), "termination": r.termination.value,
                                 "t_final": r.trajectory.t_final})
    top, prev = levels[-1], levels[-2]
    for r in (prev, top):
        if isinstance(r, Exception):
            return CheckResult(CheckStatus.FAIL, f"refinement level failed: {r}", ev)
    d = abs(float(top.exponents[0]) - float(prev.exponents[0]))
    ev["top_two_difference"] = d
    if top.termination is not prev.termination:
        return CheckResult(CheckStatus.FAIL,
                           f"terminations differ between top levels ({prev.termination.value} vs "
                           f"{top.termination.value})", ev)
    if not d <= th.refinement_agreement:
        return CheckResult(CheckStatus.FAIL, f"lambda1 moves by {d:.4g} > {th.refinement_agreement} under refinement", ev)
    return CheckResult(CheckStatus.PASS, f"lambda1 stable to {d:.3g} across the top two levels", ev)


def run_protocol(sys: SystemDef, p0, cfg: IntegratorConfig | None = None,
                 regularized_counterpart: SystemDef | None = None, *, thresholds: Thresholds | None = None,
                 transient: float | None = None, workers: int = 1) -> DiagnosticReport:
    """Run refinement, regularization and indicator checks on ``sys`` from ``p0``.

    The indicator check (Lyapunov spectrum, Kaplan-Yorke dimension, power
    spectrum) runs on the unrefined settings and doubles as rung 0 of the
    refinement ladder. Integration failures become Fail results.
    """
    cfg = cfg or IntegratorConfig()
    th = thresholds or Thresholds()
    transient = default_transient(cfg.t_end) if transient is None else transient
    p0 = np.asarray(p0, dtype=float)
    warnings = []

    jobs = [(sys, p0, cfg.refined(k), th.gs_interval, transient) for k in range(th.ladder_levels)]
    if regularized_counterpart is not None:
        jobs.append((regularized_counterpart, p0, cfg, th.gs_interval, transient))
    results = _parallel_map(_lyap_job, jobs, workers)
    ladder = results[: th.ladder_levels]

    indicators = _indicator_check(sys, ladder[0], th, transient)
    refinement = _refinement_check(ladder, th)
    if regularized_counterpart is not None:
        res = results[-1]
        if isinstance(res, Exception):
            regularization = CheckResult(CheckStatus.FAIL, f"counterpart integration failed: {res}",
                                         {"error": str(res)})
        else:
            lam1 = float(res.exponents[0])
            ev = {"system": regularized_counterpart.name, "lyapunov": res.as_dict()}
            if lam1 > th.lambda_min:
                regularization = CheckResult(CheckStatus.PASS, f"counterpart lambda1={lam1:.4g} stays positive", ev)
            else:
                regularization = CheckResult(
                    CheckStatus.FAIL, f"counterpart {regularized_counterpart.name} has lambda1={lam1:.4g} "
                                      f"<= {th.lambda_min}", ev)
    else:
        reason = "no regularized counterpart supplied"
        if sys.has_singular_set:
            warnings.append(f"{sys.name} has a singular set but no regularized counterpart; "
                            "verdict rests on refinement and indicators")
        else:
            reason = "field is globally defined"
        regularization = CheckResult(CheckStatus.NOT_APPLICABLE, reason)

    used = asdict(th)
    used["transient"] = transient
    used["kaplan_yorke_range"] = [sys.dim - 1, sys.dim]
    used["integrator"] = asdict(cfg)
    used["singular_guard"] = cfg.singular_guard if sys.has_singular_set else None
    checks = {"refinement": refinement, "regularization": regularization, "indicators": indicators}
    return DiagnosticReport(
        system=sys.name,
        checks=checks,
        verdict=verdict(refinement.status, regularization.status, indicators.status),
        thresholds_used=to_jsonable(used),
        unevaluated=["dense periodic orbits (no numerical procedure defined)"],
        warnings=warnings,
    )


def counterpart_of(sys: SystemDef) -> SystemDef | None:
    """Built-in regularized partner with the same parameters, if any."""
    if sys.counterpart is None:
        return None
    return make_system(sys.counterpart, **sys.params)
