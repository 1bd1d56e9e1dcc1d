"""``chaos-triage`` command line.

Every command reads an optional YAML/JSON config (``--config``), applies
flag overrides, writes the resolved config to ``<out>/config.json`` and then
its artifacts next to it.

Exit codes: 0 success, 2 config error, 3 integration failure (partial
outputs written). ``diagnose`` encodes the verdict instead: 0 Genuine,
10 Spurious, 11 NotChaotic, 12 Inconclusive.
"""

from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import bifurcation, diagnostics, equivalence, protocol
from .errors import ChaosTriageError, ConfigError, NonFiniteStateError, SingularPointError
from .integrate import IntegratorConfig, integrate, write_columns_csv, write_json
from .systems import make_system

log = logging.getLogger("chaos_triage")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
VERDICT_EXIT = {
    protocol.Verdict.GENUINE: 0,
    protocol.Verdict.SPURIOUS: 10,
    protocol.Verdict.NOT_CHAOTIC: 11,
    protocol.Verdict.INCONCLUSIVE: 12,
}

DEFAULT_IC = {
    "cdk3d": [1.0, 0.0, 0.5],
    "cdk2d": [1.0, 0.5],
    "cdk-regularized": [1.0, 0.5],
    "nonsmooth-abs": [0.01, 0.01],
    "linear-test": [1.0, 1.0],
    "rotation-test": [1.0, 0.0],
}

DEFAULTS = {
    "system": None,
    "params": {},
    "ic": None,
    "integrator": {
        "method": "rk45",
        "dt": 0.01,
        "abs_tol": 1e-9,
        "rel_tol": 1e-9,
        "t_end": 2000.0,
        "max_steps": 10**8,
        "singular_guard": 1e-6,
        "sample_dt": None,
    },
    "diagnostics": {
        "gs_interval": diagnostics.GS_INTERVAL,
        "transient": None,
        "component": 1,
        "max_lag": 20.0,
        "cluster_tol": diagnostics.CLUSTER_TOL,
        "lambda_min": 0.1,
        "refinement_agreement": 0.1,
        "ladder_levels": 3,
    },
    "sweep": {
        "param": "a",
        "lo": 9.3,
        "hi": 9.75,
        "n": 400,
        "direction": "descending",
        "ic_policy": "continuation",
        "max_n": 6,
        "t_end": 400.0,
    },
    "equivalence": {"r0": 0.2, "r1": 5.0, "horizon": 50.0},
    "out": None,
    "workers": None,
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and k != "params":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _parse_kv(items) -> dict:
    out = {}
    for item in items or ():
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects k=v, got {item!r}")
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"--param {k}: {v!r} is not a number") from None
    return out


def _floats(text: str, flag: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(cfg, loaded)
    if args.system:
        cfg["system"] = args.system
    cfg["params"] = {**cfg["params"], **_parse_kv(args.param)}
    if args.ic:
        cfg["ic"] = _floats(args.ic, "--ic")
    if args.t_end is not None:
        cfg["integrator"]["t_end"] = args.t_end
    if args.tol is not None:
        cfg["integrator"]["abs_tol"] = cfg["integrator"]["rel_tol"] = args.tol
    if args.method:
        cfg["integrator"]["method"] = args.method
    if args.dt is not None:
        cfg["integrator"]["dt"] = args.dt
    if args.sweep:
        parts = args.sweep.split(":")
        if len(parts) != 4:
            raise ConfigError(f"--sweep expects name:lo:hi:n, got {args.sweep!r}")
        try:
            cfg["sweep"].update(param=parts[0], lo=float(parts[1]), hi=float(parts[2]), n=int(parts[3]))
        except ValueError:
            raise ConfigError(f"--sweep: bad numbers in {args.sweep!r}") from None
    if args.out:
        cfg["out"] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    if cfg["out"] is None:
        cfg["out"] = os.environ.get("CHAOS_TRIAGE_OUT", "out")
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1

    if not cfg["system"]:
        raise ConfigError("missing required key 'system' (use --system or the config file)")
    if cfg["ic"] is None:
        cfg["ic"] = DEFAULT_IC.get(cfg["system"])
    return cfg


def _integrator(cfg: dict, **over) -> IntegratorConfig:
    try:
        return IntegratorConfig(**{**cfg["integrator"], **over})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _build(cfg: dict):
    s = make_system(cfg["system"], **cfg["params"])
    p0 = np.asarray(cfg["ic"], dtype=float)
    if p0.shape != (s.dim,):
        raise ConfigError(f"{s.name} needs a {s.dim}-component --ic, got {cfg['ic']}")
    return s, p0


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    """Integrate one orbit; writes trajectory.csv and summary.json."""
    s, p0 = _build(cfg)
    t0 = time.perf_counter()
    try:
        trj = integrate(s, p0, _integrator(cfg))
        code = EXIT_OK
    except NonFiniteStateError as exc:
        trj = exc.trajectory
        code = EXIT_INTEGRATION
        log.error("%s", exc)
        if trj is None:
            write_json(out / "summary.json", {"error": str(exc)})
            return code
    summary = trj.summary()
    summary["runtime_s"] = time.perf_counter() - t0
    summary["system"] = s.name
    if code:
        summary["error"] = "non-finite state; trajectory truncated"
    trj.to_csv(out / "trajectory.csv")
    write_json(out / "summary.json", summary)
    log.info("%s: %s at t=%.6g", s.name, trj.termination.value, trj.t_final)
    return code


def cmd_lyapunov(cfg: dict, out: Path) -> int:
    """Lyapunov spectrum; writes lyapunov.json and lyapunov_history.csv."""
    s, p0 = _build(cfg)
    d = cfg["diagnostics"]
    res = diagnostics.lyapunov_spectrum(s, p0, _integrator(cfg), d["gs_interval"], d["transient"])
    payload = res.as_dict()
    try:
        payload["kaplan_yorke"] = diagnostics.kaplan_yorke(res.exponents)
    except ChaosTriageError as exc:
        payload["kaplan_yorke"] = None
        payload["notes"].append(str(exc))
    write_json(out / "lyapunov.json", payload)
    res.history_to_csv(out / "lyapunov_history.csv")
    log.info("%s: exponents %s", s.name, np.array2string(res.exponents, precision=4))
    return EXIT_OK


def cmd_spectrum(cfg: dict, out: Path) -> int:
    """Power spectrum and autocorrelation; writes spectrum.csv, acf.csv, spectrum.json."""
    s, p0 = _build(cfg)
    d = cfg["diagnostics"]
    icfg = _integrator(cfg)
    if icfg.sample_dt is None:
        icfg = _integrator(cfg, sample_dt=0.01)
    trj = integrate(s, p0, icfg)
    tr = diagnostics.default_transient(icfg.t_end) if d["transient"] is None else d["transient"]
    payload = {"termination": trj.termination.value, "t_final": trj.t_final}
    code = EXIT_OK
    try:
        spec = diagnostics.power_spectrum(trj, d["component"], transient=tr)
        spec.to_csv(out / "spectrum.csv")
        payload.update(spectral_flatness=spec.spectral_flatness, dominant_peaks=spec.dominant_peaks,
                       peak_fraction=spec.peak_fraction, total_power=spec.total_power,
                       broadband=spec.is_broadband())
        lags, acf, decay = diagnostics.autocorrelation(trj, d["component"], d["max_lag"], transient=tr)
        diagnostics.acf_to_csv(out / "acf.csv", lags, acf)
        payload["acf_decay_lag"] = decay
    except ChaosTriageError as exc:
        payload["error"] = str(exc)
        code = EXIT_INTEGRATION
    write_json(out / "spectrum.json", payload)
    return code


def cmd_bifurcate(cfg: dict, out: Path) -> int:
    """Parameter sweep and doubling localization; writes bifurcation.csv, counts.csv, doublings.json."""
    s, p0 = _build(cfg)
    sw = cfg["sweep"]
    d = cfg["diagnostics"]
    spec = bifurcation.SweepSpec(sw["param"], float(sw["lo"]), float(sw["hi"]), int(sw["n"]), tuple(p0),
                                 direction=sw["direction"], ic_policy=sw["ic_policy"])
    icfg = _integrator(cfg, t_end=float(sw["t_end"]))
    diagram = bifurcation.sweep(s, spec, icfg, transient=d["transient"], cluster_tol=d["cluster_tol"],
                                component=d["component"], workers=cfg["workers"])
    diagram = bifurcation.find_doublings(diagram, s, p0=p0, cfg=icfg, max_n=int(sw["max_n"]),
                                         transient=d["transient"], cluster_tol=d["cluster_tol"],
                                         component=d["component"])
    diagram.to_csv(out / "bifurcation.csv")
    write_columns_csv(out / "counts.csv", [sw["param"], "cluster_count"], diagram.counts())
    diagram.write_doublings_json(out / "doublings.json")
    for w in diagram.warnings:
        log.warning("%s", w)
    return EXIT_OK


def cmd_equivalence(cfg: dict, out: Path) -> int:
    """Singular vs regularized planar CDK orbits; writes equivalence.json and orbits.csv."""
    params = {k: v for k, v in cfg["params"].items() if k in ("a", "b")}
    e = cfg["equivalence"]
    ann = equivalence.AnnulusSpec(float(e["r0"]), float(e["r1"]))
    p0 = cfg["ic"] if cfg["ic"] is not None and len(cfg["ic"]) == 2 else DEFAULT_IC["cdk2d"]
    rep = equivalence.annulus_orbit_compare(params, ann, p0, float(e["horizon"]))
    zeros = equivalence.equilibrium_zero_sets(params, ann)
    payload = rep.as_dict()
    payload["equilibria"] = zeros
    write_json(out / "equivalence.json", payload)
    rep.orbits_to_csv(out / "orbits.csv")
    return EXIT_OK


def cmd_diagnose(cfg: dict, out: Path) -> int:
    """Run the three-check protocol; exit code encodes the verdict."""
    s, p0 = _build(cfg)
    d = cfg["diagnostics"]
    th = protocol.Thresholds(lambda_min=d["lambda_min"], refinement_agreement=d["refinement_agreement"],
                             gs_interval=d["gs_interval"], ladder_levels=int(d["ladder_levels"]))
    rep = protocol.run_protocol(s, p0, _integrator(cfg), protocol.counterpart_of(s), thresholds=th,
                                transient=d["transient"], workers=cfg["workers"])
    rep.to_json(out / "report.json")
    (out / "report.txt").write_text(rep.to_text())
    print(rep.to_text(), end="")
    return VERDICT_EXIT[rep.verdict]


COMMANDS = {
    "simulate": cmd_simulate,
    "lyapunov": cmd_lyapunov,
    "spectrum": cmd_spectrum,
    "bifurcate": cmd_bifurcate,
    "equivalence": cmd_equivalence,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help="registered system name")
    common.add_argument("--param", action="append", metavar="K=V", help="parameter override (repeatable)")
    common.add_argument("--ic", metavar="X,Y[,Z]", help="initial condition")
    common.add_argument("--t-end", type=float, dest="t_end")
    common.add_argument("--tol", type=float, help="absolute and relative tolerance")
    common.add_argument("--method", choices=("rk45", "rk4"))
    common.add_argument("--dt", type=float, help="fixed step for rk4")
    common.add_argument("--sweep", metavar="NAME:LO:HI:N")
    common.add_argument("--out", metavar="DIR", help="output directory (default $CHAOS_TRIAGE_OUT or ./out)")
    common.add_argument("--workers", type=int)
    common.add_argument("--config", metavar="FILE", help="YAML or JSON config")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chaos-triage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip())
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "config.json", {"command": args.command, **cfg})
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, SingularPointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChaosTriageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
