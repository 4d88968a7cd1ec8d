"""Experiment configuration: a TOML document with fixed sections.

The schema is strict: unknown sections or keys are rejected, every
cross-field constraint is checked at load time, and parse -> serialize ->
parse is the identity on the parsed form.
"""

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .fedsim.simulator import ALGORITHMS

__all__ = [
    "ConfigError",
    "FederationSection",
    "TrainingSection",
    "SparsificationSection",
    "DataSection",
    "OutputSection",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "serialize_config",
]


class ConfigError(ValueError):
    """Configuration file is malformed or violates the schema."""


@dataclass(frozen=True)
class FederationSection:
    n: int = 300
    groups: int = 3
    epsilons: "tuple[float, ...]" = (0.5, 1.5, 3.0)
    q: float = 0.1
    group_ratios: "tuple[float, ...]" = ()
    delta: float = 0.0            # 0 means the 1/n^1.1 policy
    sigma_method: str = "closed_form"


@dataclass(frozen=True)
class TrainingSection:
    algorithms: "tuple[str, ...]" = ("p_fedavg", "dp_fedavg", "gdpfed", "gdpfed_plus")
    rounds: int = 50
    local_steps: int = 5
    learning_rate: float = 0.1
    lr_decay: float = 0.99
    momentum: float = 0.0
    batch_size: int = 10
    clip_norm: float = 0.25
    seeds: "tuple[int, ...]" = (1, 2, 3)
    model: str = "logistic"
    hidden_units: int = 32
    activation: str = "tanh"


@dataclass(frozen=True)
class SparsificationSection:
    mode: str = "fixed_fractions"
    fractions: "tuple[float, ...]" = (0.7, 0.8, 0.9)


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    classes: int = 10
    features: int = 32
    examples_per_client: int = 60
    class_sep: float = 7.0
    noniid_alpha: float = 0.0     # 0 means IID split
    eval_examples: int = 2000
    data_seed: int = 0
    path: str = ""
    images: str = ""
    labels: str = ""


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs/experiment"


@dataclass(frozen=True)
class ExperimentConfig:
    federation: FederationSection = field(default_factory=FederationSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sparsification: SparsificationSection = field(default_factory=SparsificationSection)
    data: DataSection = field(default_factory=DataSection)
    output: OutputSection = field(default_factory=OutputSection)

    def resolved_delta(self) -> float:
        if self.federation.delta > 0:
            return self.federation.delta
        return float(self.federation.n) ** -1.1

    def resolved_ratios(self) -> "tuple[float, ...]":
        if self.federation.group_ratios:
            return self.federation.group_ratios
        return tuple(1.0 for _ in range(self.federation.groups))


_SECTIONS = {
    "federation": FederationSection,
    "training": TrainingSection,
    "sparsification": SparsificationSection,
    "data": DataSection,
    "output": OutputSection,
}

# Tuple-typed keys and their element coercions.
_TUPLE_KEYS = {
    ("federation", "epsilons"): float,
    ("federation", "group_ratios"): float,
    ("training", "algorithms"): str,
    ("training", "seeds"): int,
    ("sparsification", "fractions"): float,
}


def _coerce(section: str, key: str, value, target_type):
    where = f"[{section}].{key}"
    if target_type is tuple or str(target_type).startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        elem = _TUPLE_KEYS[(section, key)]
        out = []
        for i, v in enumerate(value):
            if elem is float and isinstance(v, (int, float)) and not isinstance(v, bool):
                out.append(float(v))
            elif elem is int and isinstance(v, int) and not isinstance(v, bool):
                out.append(int(v))
            elif elem is str and isinstance(v, str):
                out.append(v)
            else:
                raise ConfigError(f"{where}[{i}]: expected {elem.__name__}, got {v!r}")
        return tuple(out)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type")  # pragma: no cover


def _build_section(name: str, payload: dict):
    cls = _SECTIONS[name]
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(payload) - set(known))
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {unknown}")
    kwargs = {}
    for key, value in payload.items():
        target = known[key].type
        if (name, key) in _TUPLE_KEYS:
            kwargs[key] = _coerce(name, key, value, tuple)
        elif target in ("int", int):
            kwargs[key] = _coerce(name, key, value, int)
        elif target in ("float", float):
            kwargs[key] = _coerce(name, key, value, float)
        else:
            kwargs[key] = _coerce(name, key, value, str)
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig) -> None:
    fed, tr, sp, da = cfg.federation, cfg.training, cfg.sparsification, cfg.data
    M = fed.groups
    if fed.n < 2:
        raise ConfigError("[federation].n: need at least 2 clients")
    if M < 1 or M > fed.n:
        raise ConfigError(f"[federation].groups: need 1 <= groups <= n, got {M}")
    if len(fed.epsilons) != M:
        raise ConfigError(
            f"[federation].epsilons: expected {M} entries, got {len(fed.epsilons)}"
        )
    if any(e <= 0 for e in fed.epsilons):
        raise ConfigError("[federation].epsilons: budgets must be positive")
    if not 0.0 < fed.q <= 1.0:
        raise ConfigError(f"[federation].q: must lie in (0, 1], got {fed.q}")
    if fed.group_ratios and len(fed.group_ratios) != M:
        raise ConfigError(f"[federation].group_ratios: expected {M} entries")
    if fed.group_ratios and any(r <= 0 for r in fed.group_ratios):
        raise ConfigError("[federation].group_ratios: ratios must be positive")
    if fed.delta and not 0.0 < fed.delta < 1.0:
        raise ConfigError(f"[federation].delta: must lie in (0, 1), got {fed.delta}")
    if fed.sigma_method not in ("closed_form", "numeric"):
        raise ConfigError(
            f"[federation].sigma_method: must be closed_form or numeric, got {fed.sigma_method!r}"
        )

    unknown_algorithms = sorted(set(tr.algorithms) - set(ALGORITHMS))
    if unknown_algorithms:
        raise ConfigError(f"[training].algorithms: unknown {unknown_algorithms}")
    if not tr.algorithms:
        raise ConfigError("[training].algorithms: need at least one algorithm")
    if tr.rounds < 0:
        raise ConfigError("[training].rounds: must be >= 0")
    if tr.local_steps < 1 or tr.batch_size < 1:
        raise ConfigError("[training]: local_steps and batch_size must be >= 1")
    if tr.learning_rate <= 0 or tr.clip_norm <= 0:
        raise ConfigError("[training]: learning_rate and clip_norm must be positive")
    if not 0.0 < tr.lr_decay <= 1.0:
        raise ConfigError(f"[training].lr_decay: must lie in (0, 1], got {tr.lr_decay}")
    if not 0.0 <= tr.momentum < 1.0:
        raise ConfigError(f"[training].momentum: must lie in [0, 1), got {tr.momentum}")
    if not tr.seeds:
        raise ConfigError("[training].seeds: need at least one seed")
    if any(s < 0 for s in tr.seeds):
        raise ConfigError("[training].seeds: seeds must be nonnegative")
    if tr.model not in ("logistic", "mlp"):
        raise ConfigError(f"[training].model: must be logistic or mlp, got {tr.model!r}")
    if tr.model == "mlp" and tr.hidden_units < 1:
        raise ConfigError("[training].hidden_units: must be >= 1")
    if tr.activation not in ("tanh", "relu"):
        raise ConfigError(f"[training].activation: must be tanh or relu, got {tr.activation!r}")

    if sp.mode not in ("optimal_phi", "fixed_fractions"):
        raise ConfigError(
            f"[sparsification].mode: must be optimal_phi or fixed_fractions, got {sp.mode!r}"
        )
    if sp.mode == "fixed_fractions":
        if len(sp.fractions) != M:
            raise ConfigError(f"[sparsification].fractions: expected {M} entries")
        if any(not 0.0 <= f <= 1.0 for f in sp.fractions):
            raise ConfigError("[sparsification].fractions: must lie in [0, 1]")

    if da.source not in ("synthetic", "csv", "idx"):
        raise ConfigError(f"[data].source: must be synthetic, csv, or idx, got {da.source!r}")
    if da.source == "synthetic":
        if da.classes < 2 or da.features < 1 or da.examples_per_client < 1:
            raise ConfigError("[data]: classes >= 2, features >= 1, examples_per_client >= 1")
        if da.eval_examples < 1:
            raise ConfigError("[data].eval_examples: must be >= 1")
    if da.source == "csv" and not da.path:
        raise ConfigError("[data].path: required for csv source")
    if da.source == "idx" and (not da.images or not da.labels):
        raise ConfigError("[data]: images and labels are required for idx source")
    if da.noniid_alpha < 0:
        raise ConfigError("[data].noniid_alpha: must be >= 0 (0 disables)")
    if not math.isfinite(da.class_sep) or da.class_sep <= 0:
        raise ConfigError("[data].class_sep: must be positive")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    # The delta policy keyword maps to the 0.0 sentinel (= 1/n^1.1).
    fed_raw = raw.get("federation", {})
    if isinstance(fed_raw, dict) and isinstance(fed_raw.get("delta"), str):
        if fed_raw["delta"] != "auto":
            raise ConfigError(
                f"[federation].delta: must be a number or 'auto', got {fed_raw['delta']!r}"
            )
        fed_raw = {**fed_raw, "delta": 0.0}
        raw = {**raw, "federation": fed_raw}
    sections = {}
    for name in _SECTIONS:
        payload = raw.get(name, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"[{name}]: expected a table")
        sections[name] = _build_section(name, payload)
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _asdict_section(section) -> dict:
    return {f.name: getattr(section, f.name) for f in fields(section)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit TOML such that parse(serialize(cfg)) == cfg."""
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)
