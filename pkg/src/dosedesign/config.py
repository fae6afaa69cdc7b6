"""JSON run-configuration: schema, validation, and object construction.

One schema document drives ``--help`` text, CLI validation, and the conduct
service's session validation, so the three can never drift apart.
"""
from __future__ import annotations

import json
from typing import Callable

import jsonschema

from .core import BiomarkerModel, DoseGrid, ToxScenario
from .engines import DESIGN_KINDS, Design, build_design, design_catalog

__all__ = [
    "ConfigError",
    "run_config_schema",
    "session_config_schema",
    "validate_config",
    "validate_session_config",
    "apply_overrides",
    "build_truth",
    "build_design_from_config",
    "schema_help_text",
]


class ConfigError(ValueError):
    """Invalid configuration; carries (json_path, message) diagnostics."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in errors))


_MEAN_FORMS = {
    "linear": {"intercept": 0.0, "slope": 1.0},
}
_SD_FORMS = {
    "constant": {"value": 1.0},
    "linear": {"intercept": 1.0, "slope": 0.0},
}


def _design_block_schema() -> dict:
    variants = []
    for entry in design_catalog():
        params = entry["parameters"]
        props = dict(params.get("properties", {}))
        props["kind"] = {"const": entry["kind"]}
        variants.append(
            {
                "type": "object",
                "properties": props,
                "required": ["kind"] + params.get("required", []),
                "additionalProperties": False,
            }
        )
    return {
        "type": "object",
        "description": "design block; parameters depend on kind",
        "properties": {"kind": {"enum": sorted(DESIGN_KINDS)}},
        "required": ["kind"],
        "oneOf": variants,
    }


def _truth_block_schema() -> dict:
    return {
        "type": "object",
        "description": "ground truth: a toxicity scenario or a biomarker model",
        "oneOf": [
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "tox_scenario"},
                    "probs": {
                        "type": "array",
                        "items": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                        "minItems": 2,
                        "description": "per-level toxicity probabilities, nondecreasing",
                    },
                    "tags": {"type": "array", "items": {"type": "string"},
                             "description": "display-only dose schedule labels"},
                },
                "required": ["kind", "probs"],
                "additionalProperties": False,
            },
            {
                "type": "object",
                "properties": {
                    "kind": {"const": "biomarker"},
                    "mean": {
                        "type": "object",
                        "description": "mean function M(x); form linear: intercept + slope*x",
                        "properties": {
                            "form": {"enum": sorted(_MEAN_FORMS)},
                            "intercept": {"type": "number", "default": 0.0},
                            "slope": {"type": "number", "exclusiveMinimum": 0.0, "default": 1.0},
                        },
                        "required": ["form"],
                        "additionalProperties": False,
                    },
                    "sd": {
                        "type": "object",
                        "description": "sd function sigma(x); constant or linear with slope >= 0",
                        "properties": {
                            "form": {"enum": sorted(_SD_FORMS)},
                            "value": {"type": "number", "minimum": 0.0},
                            "intercept": {"type": "number", "minimum": 0.0},
                            "slope": {"type": "number", "minimum": 0.0},
                        },
                        "required": ["form"],
                        "additionalProperties": False,
                    },
                    "t0": {"type": "number", "description": "toxicity threshold on the biomarker scale"},
                    "p": {"type": "number", "exclusiveMinimum": 0.0, "exclusiveMaximum": 1.0,
                          "description": "target exceedance probability"},
                    "noise": {"enum": ["normal", "uniform"], "default": "normal",
                              "description": "standardized error distribution"},
                    "n_levels": {"type": "integer", "minimum": 2,
                                 "description": "dose grid size for biomarker truths"},
                },
                "required": ["kind", "mean", "sd", "t0", "p", "n_levels"],
                "additionalProperties": False,
            },
        ],
    }


def run_config_schema() -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": {
            "design": _design_block_schema(),
            "truth": _truth_block_schema(),
            "trial": {
                "type": "object",
                "properties": {
                    "n_cohorts": {"type": "integer", "minimum": 1,
                                  "description": "maximum number of cohorts"},
                    "m": {"type": "integer", "minimum": 1, "description": "cohort size"},
                    "start_level": {"type": "integer", "minimum": 1, "default": 1,
                                    "description": "starting dose level"},
                },
                "required": ["n_cohorts", "m"],
                "additionalProperties": False,
            },
            "execution": {
                "type": "object",
                "properties": {
                    "reps": {"type": "integer", "minimum": 1, "default": 1000,
                             "description": "Monte Carlo replicates"},
                    "seed": {"type": "integer", "minimum": 0, "default": 0,
                             "description": "master RNG seed"},
                    "threads": {"type": "integer", "minimum": 1, "default": 1,
                                "description": "worker processes for replicates"},
                },
                "additionalProperties": False,
            },
            "output": {
                "type": "object",
                "properties": {
                    "dir": {"type": "string", "default": "out",
                            "description": "output directory"},
                    "formats": {
                        "type": "array",
                        "items": {"enum": ["json", "csv"]},
                        "default": ["json"],
                        "description": "report formats to write",
                    },
                },
                "additionalProperties": False,
            },
            "check": {
                "type": "object",
                "description": "free-form parameters for verify/asymptotics commands",
            },
        },
        "required": ["design"],
        "additionalProperties": False,
    }


def session_config_schema() -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": {
            "design": _design_block_schema(),
            "n_levels": {"type": "integer", "minimum": 2,
                         "description": "dose grid size"},
            "m": {"type": "integer", "minimum": 1, "description": "cohort size"},
            "start_level": {"type": "integer", "minimum": 1, "default": 1},
            "seed": {"type": "integer", "minimum": 0, "default": 0,
                     "description": "session RNG seed for randomized designs"},
            "coherence_guard": {"type": "boolean", "default": False,
                                "description": "clamp incoherent recommendations"},
        },
        "required": ["design", "n_levels", "m"],
        "additionalProperties": False,
    }


def _schema_errors(doc: dict, schema: dict) -> list[tuple[str, str]]:
    validator = jsonschema.Draft202012Validator(schema)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        # oneOf failures are noisy; surface why the branch matching this
        # block's "kind" failed instead of listing every branch
        if err.validator == "oneOf" and isinstance(err.instance, dict) and "kind" in err.instance:
            kind = err.instance["kind"]
            reported = False
            for sub in err.context or []:
                branch_idx = sub.schema_path[0]
                branch = err.validator_value[branch_idx]
                branch_kind = branch.get("properties", {}).get("kind", {}).get("const")
                if branch_kind != kind or list(sub.absolute_path) == ["kind"]:
                    continue
                sub_path = ".".join(
                    str(p) for p in list(err.absolute_path) + list(sub.absolute_path)
                )
                errors.append((sub_path or path, sub.message))
                reported = True
            if not reported:
                errors.append((path, f"no design/truth variant matches kind {kind!r}"))
        else:
            errors.append((path, err.message))
    return errors


def _cross_checks(doc: dict) -> list[tuple[str, str]]:
    errors: list[tuple[str, str]] = []
    design_cfg = doc.get("design", {})
    kind = design_cfg.get("kind")
    cls = DESIGN_KINDS.get(kind)
    trial = doc.get("trial", {})
    m = trial.get("m")
    if cls is not None and m is not None:
        if cls.required_m is not None and m != cls.required_m:
            errors.append(
                ("trial.m", f"design {kind!r} requires cohorts of exactly {cls.required_m}")
            )
        elif m < cls.min_m:
            errors.append(
                ("trial.m",
                 f"design {kind!r} needs cohort size m >= {cls.min_m} "
                 "(the O-statistic needs a sample sd)")
            )
    truth = doc.get("truth")
    if cls is not None and truth is not None:
        tkind = truth.get("kind")
        if cls.outcome_kind == "binary" and tkind == "biomarker":
            errors.append(("truth.kind", f"design {kind!r} needs a tox_scenario truth"))
        if cls.outcome_kind == "biomarker" and tkind == "tox_scenario":
            errors.append(("truth.kind", f"design {kind!r} needs a biomarker truth"))
    if truth is not None and truth.get("kind") == "tox_scenario":
        probs = truth.get("probs", [])
        if any(b < a for a, b in zip(probs, probs[1:])):
            errors.append(("truth.probs", "toxicity probabilities must be nondecreasing"))
        start = trial.get("start_level", 1)
        if probs and start > len(probs):
            errors.append(("trial.start_level", f"start level {start} outside 1..{len(probs)}"))
    return errors


def validate_config(doc: dict) -> None:
    errors = _schema_errors(doc, run_config_schema())
    if not errors:
        errors = _cross_checks(doc)
    if errors:
        raise ConfigError(errors)


def validate_session_config(doc: dict) -> None:
    errors = _schema_errors(doc, session_config_schema())
    if not errors:
        cls = DESIGN_KINDS.get(doc.get("design", {}).get("kind"))
        m = doc.get("m")
        if cls is not None and m is not None:
            if cls.required_m is not None and m != cls.required_m:
                errors.append(("m", f"design requires cohorts of exactly {cls.required_m}"))
            elif m < cls.min_m:
                errors.append(("m", f"design needs cohort size m >= {cls.min_m}"))
        if cls is not None and doc.get("coherence_guard") and cls.outcome_kind != "binary":
            errors.append(("coherence_guard", "coherence guard applies to binary designs only"))
        start = doc.get("start_level", 1)
        if "n_levels" in doc and start > doc["n_levels"]:
            errors.append(("start_level", f"start level {start} outside 1..{doc['n_levels']}"))
    if errors:
        raise ConfigError(errors)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply --set key.path=value entries; values parse as JSON, falling
    back to raw strings."""
    out = json.loads(json.dumps(doc))
    for entry in overrides:
        if "=" not in entry:
            raise ConfigError([(entry, "override must look like key.path=value")])
        path, raw = entry.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError([(path, f"cannot descend into non-object at {key!r}")])
        node[keys[-1]] = value
    return out


def _mean_fn(cfg: dict) -> Callable[[float], float]:
    intercept = float(cfg.get("intercept", 0.0))
    slope = float(cfg.get("slope", 1.0))
    return lambda x: intercept + slope * x


def _sd_fn(cfg: dict) -> Callable[[float], float]:
    if cfg["form"] == "constant":
        value = float(cfg.get("value", 1.0))
        return lambda x: value
    intercept = float(cfg.get("intercept", 1.0))
    slope = float(cfg.get("slope", 0.0))
    return lambda x: intercept + slope * x


def build_truth(cfg: dict) -> tuple[ToxScenario | BiomarkerModel, DoseGrid]:
    if cfg["kind"] == "tox_scenario":
        scenario = ToxScenario(cfg["probs"])
        tags = tuple(cfg["tags"]) if "tags" in cfg else None
        return scenario, DoseGrid(scenario.n_levels, tags)
    model = BiomarkerModel(
        mean=_mean_fn(cfg["mean"]),
        sd=_sd_fn(cfg["sd"]),
        t0=float(cfg["t0"]),
        p=float(cfg["p"]),
        noise=cfg.get("noise", "normal"),
    )
    return model, DoseGrid(int(cfg["n_levels"]))


def build_design_from_config(
    design_cfg: dict, start_level: int = 1, coherence_guard: bool = False
) -> Design:
    params = {k: v for k, v in design_cfg.items() if k != "kind"}
    return build_design(
        design_cfg["kind"], params, start_level=start_level, coherence_guard=coherence_guard
    )


def _walk_schema(schema: dict, prefix: str, lines: list[str]) -> None:
    props = schema.get("properties", {})
    for name, sub in sorted(props.items()):
        path = f"{prefix}.{name}" if prefix else name
        if sub.get("type") == "object" or "oneOf" in sub:
            desc = sub.get("description", "")
            lines.append(f"  {path:<28} object      {desc}")
            if "oneOf" in sub:
                for variant in sub["oneOf"]:
                    _walk_schema(variant, path, lines)
            else:
                _walk_schema(sub, path, lines)
        else:
            typ = sub.get("type", "|".join(str(v) for v in sub.get("enum", [])) or "const")
            if "enum" in sub:
                typ = "enum[" + ",".join(str(v) for v in sub["enum"]) + "]"
            default = sub.get("default")
            extra = f" (default {default!r})" if default is not None else ""
            desc = sub.get("description", "")
            lines.append(f"  {path:<28} {str(typ):<11} {desc}{extra}")


def schema_help_text() -> str:
    """Config reference rendered from the schema itself."""
    lines: list[str] = ["configuration keys (JSON):"]
    _walk_schema(run_config_schema(), "", lines)
    lines.append("")
    lines.append("per-design parameters (design.kind selects one):")
    for entry in design_catalog():
        lines.append(
            f"  kind={entry['kind']}  outcomes={entry['outcome_kind']}"
            + (f"  m={entry['required_m']}" if entry["required_m"] else f"  m>={entry['min_m']}")
        )
        props = entry["parameters"].get("properties", {})
        required = set(entry["parameters"].get("required", []))
        for pname, pschema in sorted(props.items()):
            req = " [required]" if pname in required else ""
            default = pschema.get("default")
            extra = f" (default {default!r})" if default is not None else ""
            lines.append(
                f"    design.{pname:<22} {pschema.get('type', 'any'):<8} "
                f"{pschema.get('description', '')}{extra}{req}"
            )
    return "\n".join(lines)
