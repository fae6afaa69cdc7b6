"""Command-line entry point: simulate, verify, asymptotics, serve.

Exit codes: 0 success/pass, 1 property fail (witnesses written), 2 config
error, 3 runtime error, 4 inconclusive verdict -- so CI can gate on
verification outcomes.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import properties as props
from . import sim
from .config import (
    ConfigError,
    apply_overrides,
    build_design_from_config,
    build_truth,
    schema_help_text,
    validate_config,
)
from .core import ToxScenario
from .sa import efficiency_ratio

__all__ = ["main"]

_EXIT_PASS = 0
_EXIT_FAIL = 1
_EXIT_CONFIG = 2
_EXIT_RUNTIME = 3
_EXIT_INCONCLUSIVE = 4


def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_config(path: str, overrides: list[str]) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([(path, "config file not found")])
    except json.JSONDecodeError as exc:
        raise ConfigError([(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}")])
    if overrides:
        doc = apply_overrides(doc, overrides)
    return doc


def _merge_execution(doc: dict, args: argparse.Namespace) -> dict:
    execution = dict(doc.get("execution", {}))
    if getattr(args, "seed", None) is not None:
        execution["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        execution["reps"] = args.reps
    if getattr(args, "threads", None) is not None:
        execution["threads"] = args.threads
    doc = dict(doc)
    doc["execution"] = execution
    return doc


def _out_dir(doc: dict, args: argparse.Namespace) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(doc.get("output", {}).get("dir", "out"))


def _print_config_errors(exc: ConfigError) -> None:
    for path, message in exc.errors:
        print(f"config error at {path}: {message}", file=sys.stderr)


def cmd_simulate(args: argparse.Namespace) -> int:
    doc = _merge_execution(_load_config(args.config, args.set or []), args)
    validate_config(doc)
    if "truth" not in doc or "trial" not in doc:
        raise ConfigError([("<root>", "simulate needs truth and trial blocks")])
    truth, grid = build_truth(doc["truth"])
    trial = doc["trial"]
    design = build_design_from_config(
        doc["design"], start_level=trial.get("start_level", 1)
    )
    execution = doc.get("execution", {})
    formats = doc.get("output", {}).get("formats", ["json"])
    keep = "csv" in formats
    report = sim.run_mc(
        design,
        truth,
        n_cohorts=trial["n_cohorts"],
        m=trial["m"],
        reps=execution.get("reps", 1000),
        seed=execution.get("seed", 0),
        grid=grid,
        threads=execution.get("threads", 1),
        keep_replicates=keep,
    )
    out = _out_dir(doc, args)
    _dump_json(out / "report.json", report.to_dict())
    if keep:
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["rep", "recommendation", "correct", "toxicities", "subjects", "cost"]
                + [f"alloc_level_{k+1}" for k in range(len(report.allocation))]
            )
            for r, rec in enumerate(report.per_rep):
                writer.writerow(
                    [r, rec["recommendation"], rec["correct"], rec["toxicities"],
                     rec["subjects"], rec["cost"]] + rec["allocation"]
                )
    print(f"design {report.design_kind}: {report.reps} replicates, "
          f"{report.n_cohorts} cohorts of {report.m}")
    print(f"  true MTD level {report.nu}; PCS {report.pcs:.4f} (se {report.pcs_se:.4f})")
    print(f"  mean toxicities {report.mean_toxicities:.2f}, "
          f"mean cost {report.cost_mean:.2f} (sd {report.cost_sd:.2f})")
    alloc = ", ".join(
        f"L{k+1}:{frac:.3f}" for k, frac in enumerate(report.allocation_fraction)
    )
    print(f"  allocation {alloc}")
    print(f"  report written to {out / 'report.json'}")
    return _EXIT_PASS


def _verify_coherence(doc: dict, seed: int) -> props.PropertyReport:
    check = doc.get("check", {})
    design = build_design_from_config(
        doc["design"],
        start_level=check.get("start_level", doc.get("trial", {}).get("start_level", 1)),
        coherence_guard=check.get("coherence_guard", False),
    )
    if "truth" in doc:
        truth, grid = build_truth(doc["truth"])
    else:
        from .core import DoseGrid

        grid = DoseGrid(check.get("n_levels", 5))
    return props.check_coherence(
        design,
        n_cohorts=check.get("n_cohorts", 8),
        m=check.get("m", doc.get("trial", {}).get("m", 1)),
        p=check.get("p", design.target_p),
        grid=grid,
        budget=check.get("budget", 2**22),
    )


def _verify_rigidity(doc: dict, seed: int) -> props.PropertyReport:
    check = doc.get("check", {})
    mode = check.get("mode", "certificate" if doc["design"]["kind"] == "dsa" else "empirical")
    if mode == "certificate":
        if doc["design"]["kind"] != "dsa":
            raise ConfigError(
                [("check.mode", "the analytic rigidity certificate applies to the dsa design")]
            )
        return props.certify_dsa_rigidity(
            b=doc["design"]["b"],
            p=doc["design"].get("target_p", 0.2),
            n_levels=check.get("n_levels", 5),
            start=check.get("start_level", doc.get("trial", {}).get("start_level", 1)),
            m=check.get("m", doc.get("trial", {}).get("m", 2)),
        )
    if "truth" not in doc:
        raise ConfigError([("truth", "empirical rigidity detection needs a truth block")])
    truth, grid = build_truth(doc["truth"])
    if not isinstance(truth, ToxScenario):
        raise ConfigError([("truth.kind", "empirical rigidity detection runs on tox scenarios")])
    design = build_design_from_config(
        doc["design"], start_level=check.get("start_level", 1)
    )
    return props.detect_rigidity_empirical(
        design,
        truth,
        p_lo=check["p_lo"],
        p_hi=check["p_hi"],
        horizon=check.get("horizon", 20),
        reps=check.get("reps", 2000),
        seed=seed,
        m=check.get("m", doc.get("trial", {}).get("m", 2)),
        threshold=check.get("threshold", 0.05),
    )


def _verify_indifference(doc: dict, seed: int) -> props.PropertyReport:
    check = doc.get("check", {})
    design = build_design_from_config(doc["design"], start_level=check.get("start_level", 1))
    scenarios = [ToxScenario(p) for p in check["scenarios"]]
    return props.estimate_indifference(
        design,
        scenarios,
        delta_grid=check["delta_grid"],
        n_long=check.get("n_long", 40),
        reps=check.get("reps", 200),
        seed=seed,
        m=check.get("m", doc.get("trial", {}).get("m", 1)),
        settle_at=check.get("settle_at"),
        epsilon=check.get("epsilon", 0.01),
    )


def _verify_unbiasedness(doc: dict, seed: int) -> props.PropertyReport:
    check = doc.get("check", {})
    design = build_design_from_config(doc["design"], start_level=check.get("start_level", 1))
    if "truth" not in doc or doc["truth"].get("kind") != "tox_scenario":
        raise ConfigError([("truth", "unbiasedness probes need a tox_scenario truth block")])
    base = ToxScenario(doc["truth"]["probs"])
    mode = check.get("mode", "perturbation")
    perturbations = check.get("perturbations") if mode == "perturbation" else check.get("scenarios")
    if not perturbations:
        key = "perturbations" if mode == "perturbation" else "scenarios"
        raise ConfigError([(f"check.{key}", f"unbiasedness mode {mode!r} needs {key}")])
    return props.probe_unbiasedness(
        design,
        base,
        k=check["level"],
        perturbations=perturbations,
        n_cohorts=check.get("n_cohorts", 20),
        m=check.get("m", doc.get("trial", {}).get("m", 1)),
        reps=check.get("reps", 1000),
        seed=seed,
        mode=mode,
    )


_VERIFIERS = {
    "coherence": _verify_coherence,
    "rigidity": _verify_rigidity,
    "indifference": _verify_indifference,
    "unbiasedness": _verify_unbiasedness,
}


def cmd_verify(args: argparse.Namespace) -> int:
    doc = _merge_execution(_load_config(args.config, args.set or []), args)
    validate_config(doc)
    seed = doc.get("execution", {}).get("seed", 0)
    report = _VERIFIERS[args.property](doc, seed)
    out = _out_dir(doc, args)
    _dump_json(out / "report.json", report.to_dict())
    if report.witnesses:
        _dump_json(
            out / "witnesses.json",
            {"witnesses": [w.to_dict() for w in report.witnesses]},
        )
    print(f"{report.property}: {report.verdict}")
    for key, value in report.statistics.items():
        if isinstance(value, (int, float, str)):
            print(f"  {key}: {value}")
    if report.witnesses:
        print(f"  first witness: {report.witnesses[0].label or report.witnesses[0].transition}")
    if report.verdict == "pass":
        return _EXIT_PASS
    if report.verdict == "fail":
        return _EXIT_FAIL
    return _EXIT_INCONCLUSIVE


def cmd_asymptotics(args: argparse.Namespace) -> int:
    doc = _merge_execution(_load_config(args.config, args.set or []), args)
    if "design" in doc:  # the curve itself needs no design block
        validate_config(doc)
    check = doc.get("check", {})
    m_values = check.get("m", 3)
    if isinstance(m_values, int):
        m_values = [m_values]
    step = check.get("grid_step", 0.001)
    p_grid = np.arange(step, 1.0, step)
    out = _out_dir(doc, args)
    payload: dict = {"grid_step": step, "curves": {}}
    rows = [("m", "p", "ratio")]
    for m in m_values:
        ratios = [efficiency_ratio(float(p), int(m)) for p in p_grid]
        arr = np.asarray(ratios)
        idx = int(np.argmin(arr))
        payload["curves"][str(m)] = {
            "min_ratio": float(arr[idx]),
            "argmin_p": float(p_grid[idx]),
            "p": [float(p) for p in p_grid],
            "ratio": [float(r) for r in ratios],
        }
        rows.extend((m, float(p), float(r)) for p, r in zip(p_grid, ratios))
        print(f"m={m}: min ratio {arr[idx]:.4f} at p={p_grid[idx]:.3f}")
    recursions = check.get("recursions", [])
    if recursions:
        payload["checks"] = []
        for rec_cfg in recursions:
            record = sim.check_asymptotics(
                rec_cfg["recursion"],
                n=rec_cfg.get("n", 2000),
                reps=rec_cfg.get("reps", 2000),
                seed=doc.get("execution", {}).get("seed", 0),
                **{k: v for k, v in rec_cfg.items() if k not in ("recursion", "n", "reps")},
            )
            payload["checks"].append(record.to_dict())
            print(
                f"{record.recursion}: empirical {record.empirical_var:.5g} vs "
                f"predicted {record.predicted_var:.5g} (ratio {record.ratio:.3f})"
            )
    _dump_json(out / "report.json", payload)
    with open(out / "report.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    print(f"curve written to {out / 'report.csv'}")
    return _EXIT_PASS


def cmd_serve(args: argparse.Namespace) -> int:
    from .conduct import create_app

    state_dir = Path(args.state_dir)
    try:
        state_dir.mkdir(parents=True, exist_ok=True)
        probe = state_dir / ".write_probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        print(f"config error at state-dir: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    ui_dir = Path(args.ui) if args.ui else None
    if ui_dir is not None and not ui_dir.is_dir():
        print(f"config error at ui: {ui_dir} is not a directory", file=sys.stderr)
        return _EXIT_CONFIG
    app = create_app(state_dir, ui_dir=ui_dir)
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return _EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dosedesign",
        description="dose-finding designs: simulation, property verification, "
        "asymptotic validation, and a trial-conduct service",
        epilog=schema_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, help="override execution.seed")
        p.add_argument("--reps", type=int, help="override execution.reps")
        p.add_argument("--threads", type=int, help="override execution.threads")
        p.add_argument("--out", help="override output.dir")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override any config key (JSON value or raw string); repeatable",
        )

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo trial simulation")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", help="check a design property")
    p_ver.add_argument(
        "property",
        choices=sorted(_VERIFIERS),
        help="which design criterion to verify",
    )
    common(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    p_asy = sub.add_parser(
        "asymptotics", help="emit the efficiency-ratio curve and variance checks"
    )
    common(p_asy)
    p_asy.set_defaults(func=cmd_asymptotics)

    p_srv = sub.add_parser("serve", help="start the trial-conduct HTTP service")
    p_srv.add_argument("--port", type=int, default=8410)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--state-dir", default="conduct-state",
                       help="directory for session event logs")
    p_srv.add_argument("--ui", help="static directory to serve at /ui (optional)")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _print_config_errors(exc)
        return _EXIT_CONFIG
    except props.BudgetExceededError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - contract: runtime errors exit 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return _EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
