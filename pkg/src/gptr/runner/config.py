"""Experiment configuration: a nested JSON document with every default documented.

A config names a problem, the algorithm constants, the surrogate mode, the
initial design and a seed. Validation reports every violated field at once.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from ..certification import FullLinearityConstants
from ..trust_region import TrConfig

__all__ = [
    "ConfigError",
    "ProblemConfig",
    "DesignConfig",
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "defaults_reference",
    "PROBLEMS",
    "MODES",
]

PROBLEMS = ("quadratic", "rosenbrock", "sine", "reactor")
MODES = ("gp", "linear", "quadratic")

# per-problem keyword parameters accepted under problem.params
_PROBLEM_PARAMS = {
    "quadratic": {"dim", "noise_std", "weights", "x0"},
    "rosenbrock": {"noise_std", "x0"},
    "sine": {"noise_std", "x0"},
    "reactor": {"scale", "noise_rel", "cost_scale", "reactor", "switch_batch", "n_batches", "reference_maxiter"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid config: " + "; ".join(errors))
        self.errors = list(errors)


@dataclass
class ProblemConfig:
    """Problem selection.

    ``params`` are passed to the problem factory. Analytic problems take
    ``noise_std`` and ``x0`` (plus ``dim`` and ``weights`` for the quadratic);
    the reactor takes ``scale`` (10), ``noise_rel`` (0.05), ``cost_scale``
    (100), ``switch_batch`` (8), ``n_batches`` (22), ``reference_maxiter``
    (200) and a ``reactor`` mapping of physical parameters.
    """

    name: str = "quadratic"
    params: dict = field(default_factory=dict)


@dataclass
class DesignConfig:
    """Initial design.

    ``count`` points (``2 n + 1`` when null) drawn uniformly in a ball of
    ``radius`` (``delta0`` when null) around the start for analytic problems.
    The reactor draws them uniformly in a box of relative half-width
    ``box_fraction`` around the Scenario I model optimum.
    """

    count: Optional[int] = None
    radius: Optional[float] = None
    box_fraction: float = 0.1


@dataclass
class ExperimentConfig:
    seed: int
    name: str = "experiment"
    mode: str = "gp"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    tr: TrConfig = field(default_factory=TrConfig)
    constants: FullLinearityConstants = field(default_factory=FullLinearityConstants)
    design: DesignConfig = field(default_factory=DesignConfig)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "mode": self.mode,
            "problem": asdict(self.problem),
            "tr": self.tr.to_dict(),
            "constants": self.constants.to_dict(),
            "design": asdict(self.design),
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        return config_hash(self)

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        errors: list[str] = []
        if not isinstance(d, dict):
            raise ConfigError(["config must be a JSON object"])
        known = {f.name for f in fields(cls)}
        for key in sorted(set(d) - known):
            errors.append(f"{key}: unknown field")

        seed = d.get("seed")
        if seed is None:
            errors.append("seed: required")
        elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            errors.append(f"seed: must be a nonnegative integer, got {seed!r}")

        name = d.get("name", "experiment")
        if not isinstance(name, str):
            errors.append("name: must be a string")
        mode = d.get("mode", "gp")
        if mode not in MODES:
            errors.append(f"mode: must be one of {list(MODES)}, got {mode!r}")
        output_dir = d.get("output_dir", "out")
        if not isinstance(output_dir, str):
            errors.append("output_dir: must be a string")

        problem = _section(d, "problem", ProblemConfig, errors)
        if problem is not None:
            if problem.name not in PROBLEMS:
                errors.append(f"problem.name: must be one of {list(PROBLEMS)}, got {problem.name!r}")
            elif not isinstance(problem.params, dict):
                errors.append("problem.params: must be an object")
            else:
                for key in sorted(set(problem.params) - _PROBLEM_PARAMS[problem.name]):
                    errors.append(f"problem.params.{key}: not a parameter of {problem.name}")
            if problem.name == "reactor" and mode != "gp":
                errors.append("mode: the reactor experiment runs in gp mode only")

        tr = None
        raw_tr = d.get("tr", {})
        if not isinstance(raw_tr, dict):
            errors.append("tr: must be an object")
        else:
            tr_known = {f.name for f in fields(TrConfig)}
            for key in sorted(set(raw_tr) - tr_known):
                errors.append(f"tr.{key}: unknown field")
            try:
                tr = TrConfig(**{k: v for k, v in raw_tr.items() if k in tr_known})
            except (TypeError, ValueError) as exc:
                # rebuild without validation to list field-level problems
                errors.extend(f"tr: {msg}" for msg in _tr_errors({k: v for k, v in raw_tr.items() if k in tr_known}, exc))

        constants = None
        raw_c = d.get("constants", {})
        if not isinstance(raw_c, dict):
            errors.append("constants: must be an object")
        else:
            c_known = {f.name for f in fields(FullLinearityConstants)}
            for key in sorted(set(raw_c) - c_known):
                errors.append(f"constants.{key}: unknown field")
            try:
                constants = FullLinearityConstants.from_dict({k: v for k, v in raw_c.items() if k in c_known})
            except (TypeError, ValueError) as exc:
                errors.append(f"constants: {exc}")

        design = _section(d, "design", DesignConfig, errors)
        if design is not None:
            if design.count is not None and (not isinstance(design.count, int) or design.count < 2):
                errors.append("design.count: must be an integer of at least 2")
            if design.radius is not None and not (isinstance(design.radius, (int, float)) and design.radius > 0):
                errors.append("design.radius: must be positive")
            if not (isinstance(design.box_fraction, (int, float)) and design.box_fraction > 0):
                errors.append("design.box_fraction: must be positive")

        if errors:
            raise ConfigError(errors)
        return cls(seed, name, mode, problem, tr, constants, design, output_dir)


def _section(d, key, cls, errors):
    raw = d.get(key, {})
    if not isinstance(raw, dict):
        errors.append(f"{key}: must be an object")
        return None
    known = {f.name for f in fields(cls)}
    for k in sorted(set(raw) - known):
        errors.append(f"{key}.{k}: unknown field")
    return cls(**{k: v for k, v in raw.items() if k in known})


def _tr_errors(values: dict, exc: Exception) -> list[str]:
    if isinstance(exc, TypeError):
        return [str(exc)]
    probe = object.__new__(TrConfig)
    for f in fields(TrConfig):
        default = f.default if f.default is not MISSING else f.default_factory()
        object.__setattr__(probe, f.name, values.get(f.name, default))
    try:
        return probe.validation_errors() or [str(exc)]
    except TypeError:
        return [str(exc)]


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    return ExperimentConfig.from_dict(raw)


def config_hash(config: ExperimentConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _rows(cls, prefix: str) -> list[str]:
    out = []
    for f in fields(cls):
        if f.default is not MISSING:
            default = f.default
        elif f.default_factory is not MISSING:
            default = f.default_factory()
        else:
            default = "(required)"
        if hasattr(default, "__dataclass_fields__"):
            continue
        shown = default if isinstance(default, str) and default == "(required)" else json.dumps(default)
        out.append(f"| `{prefix}{f.name}` | {shown} |")
    return out


def defaults_reference() -> str:
    """Markdown table of every config field and its default."""
    lines = [
        "# Configuration reference",
        "",
        "Configs are JSON objects. Omitted fields take the defaults below.",
        "",
        "| field | default |",
        "|---|---|",
    ]
    lines += _rows(ExperimentConfig, "")
    lines += _rows(ProblemConfig, "problem.")
    lines += _rows(TrConfig, "tr.")
    lines += _rows(FullLinearityConstants, "constants.")
    lines += _rows(DesignConfig, "design.")
    lines += [
        "",
        "Problem parameters (`problem.params`):",
        "",
    ]
    for name in PROBLEMS:
        lines.append(f"- `{name}`: " + ", ".join(f"`{p}`" for p in sorted(_PROBLEM_PARAMS[name])))
    lines.append("")
    return "\n".join(lines)
