"""One declarative config document per run, with strict parsing.

The document is JSON (objects, arrays, numbers, strings, booleans). Unknown
keys are rejected, every value is validated before any work starts, and the
fully-resolved config is echoed into the output directory so a run can be
reproduced from its artifacts alone.

Sub-seeds (weight init, shuffling, dropout, splits, sweep sampling) are
never part of the document: they derive from the single top-level seed, see
seeding.py.
"""

import dataclasses
import json
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

from .errors import InvalidConfigError
from .losses import LossKind
from .net import NetConfig
from .seeding import SEED_INIT, derive
from .sweep import SearchSpace
from .train import OptimizerKind, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    transpose: bool = True
    subset_n: int | None = None
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidConfigError(
                f"data.val_fraction {self.val_fraction!r} outside [0, 1)"
            )
        if self.subset_n is not None and self.subset_n < 1:
            raise InvalidConfigError("data.subset_n must be >= 1")


@dataclass(frozen=True)
class SweepConfig:
    num_trials: int = 8
    min_resource_epochs: int = 1
    max_resource_epochs: int = 4
    reduction_factor: int = 3
    deterministic: bool = False
    workers: int | None = None  # None -> available parallelism
    refine_epochs: int = 10
    space: SearchSpace = field(default_factory=SearchSpace)

    def __post_init__(self):
        if self.num_trials < 1:
            raise InvalidConfigError("sweep.num_trials must be >= 1")
        if self.refine_epochs < 1:
            raise InvalidConfigError("sweep.refine_epochs must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise InvalidConfigError("sweep.workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str | None = None
    net: NetConfig = field(default_factory=lambda: NetConfig(
        input_dim=784, hidden_dims=(256,), num_classes=26, dropout_rate=0.2))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


# Fields that are derived, not declared: rejected in documents, dropped on echo.
_DERIVED = {NetConfig: {"seed"}, TrainConfig: {"seed"}}

_ENUMS = {LossKind, OptimizerKind}


def _coerce(value, target_type, path):
    if target_type in _ENUMS:
        try:
            return target_type(value)
        except ValueError:
            options = ", ".join(m.value for m in target_type)
            raise InvalidConfigError(f"{path}: {value!r} is not one of: {options}") from None
    if target_type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if target_type is bool and isinstance(value, bool):
        return value
    if target_type is str and isinstance(value, str):
        return value
    if target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise InvalidConfigError(f"{path}: expected an array, got {value!r}")
        return tuple(value)
    raise InvalidConfigError(f"{path}: cannot read {value!r} as {target_type}")


def _parse_section(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise InvalidConfigError(f"{path}: expected an object, got {doc!r}")
    allowed = {f.name: f for f in fields(cls) if f.name not in _DERIVED.get(cls, set())}
    unknown = set(doc) - set(allowed)
    if unknown:
        raise InvalidConfigError(
            f"{path}: unknown key(s): {', '.join(sorted(unknown))}"
        )
    kwargs = {}
    for name, value in doc.items():
        sub_path = f"{path}.{name}"
        target = _FIELD_TYPES[cls][name]
        if dataclasses.is_dataclass(target):
            kwargs[name] = _parse_section(target, value, sub_path)
            continue
        if value is None and type(None) in getattr(target, "__args__", ()):
            kwargs[name] = None
            continue
        kwargs[name] = _coerce(value, _strip_optional(target), sub_path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfigError):
            raise
        raise InvalidConfigError(f"{path}: {exc}") from exc


def _strip_optional(tp):
    args = getattr(tp, "__args__", None)
    if args and type(None) in args:
        remaining = [a for a in args if a is not type(None)]
        return remaining[0]
    return tp


def _resolved_types(cls) -> dict:
    import typing

    return typing.get_type_hints(cls)


_FIELD_TYPES = {}


def _init_field_types():
    for cls in (NetConfig, TrainConfig, DataConfig, SweepConfig, SearchSpace):
        _FIELD_TYPES[cls] = _resolved_types(cls)


_init_field_types()


def from_dict(doc: dict) -> RunConfig:
    """Parse a config document; rejects unknown keys, validates everything."""
    if not isinstance(doc, dict):
        raise InvalidConfigError("config document must be a JSON object")
    known = {"seed", "out_dir", "net", "train", "data", "sweep"}
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0 or seed >= 2**64:
        raise InvalidConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise InvalidConfigError(f"out_dir must be a string, got {out_dir!r}")

    net_cfg = _parse_section(NetConfig, doc.get("net", {}), "net")
    train_cfg = _parse_section(TrainConfig, doc.get("train", {}), "train")
    data_cfg = _parse_section(DataConfig, doc.get("data", {}), "data")
    sweep_cfg = _parse_section(SweepConfig, doc.get("sweep", {}), "sweep")

    # derived sub-seeds
    net_cfg = dataclasses.replace(net_cfg, seed=derive(seed, SEED_INIT))
    train_cfg = dataclasses.replace(train_cfg, seed=seed)
    return RunConfig(seed=seed, out_dir=out_dir, net=net_cfg, train=train_cfg,
                     data=data_cfg, sweep=sweep_cfg)


def _section_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in _DERIVED.get(type(obj), set()):
            continue
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = _section_to_dict(value)
        elif isinstance(value, Enum):
            out[f.name] = value.value
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def to_dict(cfg: RunConfig) -> dict:
    """Schema-form document; from_dict(to_dict(cfg)) == cfg."""
    return {
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "net": _section_to_dict(cfg.net),
        "train": _section_to_dict(cfg.train),
        "data": _section_to_dict(cfg.data),
        "sweep": _section_to_dict(cfg.sweep),
    }


def load_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config {path} is not valid JSON: {exc}") from exc


def apply_override(doc: dict, assignment: str):
    """Apply one --set key.path=value override onto the raw document."""
    key, sep, raw_value = assignment.partition("=")
    if not sep or not key:
        raise InvalidConfigError(f"--set needs key.path=value, got {assignment!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value  # bare strings stay strings
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidConfigError(f"--set {key}: {part} is not an object")
    node[parts[-1]] = value


def echo(cfg: RunConfig, out_dir) -> Path:
    """Persist the effective config; it re-parses to an equal RunConfig."""
    path = Path(out_dir) / "effective_config.json"
    path.write_text(json.dumps(to_dict(cfg), indent=2) + "\n")
    return path
