"""Home of `TrainConfig` and the ``key = value`` config file reader.

Config files hold one ``key = value`` per line; ``#`` starts a comment. A file may
name a preset (``preset = desk``) whose values apply first; keys in the file and
then explicit overrides win over it. The same reader fills a `SyntheticSpec`.

```
preset = desk
lambda = 0.1
ablations = no_mrl
```
"""

from typing import Any, Mapping, Optional, TypeVar
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
import hashlib
import json
import os
from .assets import PRESET_NAMES, get_preset
from .errors import UsageError
from .synthetic import SyntheticSpec


SEED_ENV = "HIREX_SEED"
"""Environment variable holding the default seed."""
ABLATIONS = ("no_mtransd", "no_mrl", "no_context")
MAML_ORDERS = ("first", "full")
KEY_ALIASES = {"lambda": "contrastive_weight", "n": "false_contexts"}
"""Alternative spellings accepted in config files."""

_NON_SEMANTIC = ("workers",)


@dataclass
class TrainConfig:
    """Hyperparameters of a training run."""

    k: int = 5
    """References per task (shots)."""
    m: int = 10
    """Queries per training task."""
    candidate_size: int = 50
    """Candidates per pair, true tail included."""
    lr: float = 0.001
    """Adam learning rate of the outer loop."""
    inner_lr: float = 1.0
    """Step size of the inner update."""
    contrastive_weight: float = 0.05
    """Weight of the contrastive loss (``lambda`` in config files)."""
    margin: float = 1.0
    temperature: float = 0.5
    """Temperature of the contrastive loss."""
    false_contexts: int = 1
    """False contexts per anchor."""
    tasks_per_step: int = 32
    """Meta-tasks per outer step."""
    max_steps: int = 30000
    eval_interval: int = 1000
    """Outer steps between validation runs."""
    maml_order: str = "first"
    """``first`` treats inner gradients as constants, ``full`` differentiates them."""
    ablations: tuple[str, ...] = ()
    """Any of `ABLATIONS`."""
    seed: int = 0
    dim: int = 100
    """Embedding size d."""
    neighbor_cap: int = 50
    """Neighbors kept per entity in a context."""
    drop_path: float = 0.2
    """Drop-path rate of the set attention block."""
    workers: int = 1
    """Threads computing per-task losses within a step."""
    eval_queries: int = 0
    """Queries per evaluation task; 0 uses every non-reference triplet."""
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.01

    @property
    def no_mtransd(self) -> bool:
        """Score with plain translations instead of projected ones."""
        return "no_mtransd" in self.ablations

    @property
    def no_mrl(self) -> bool:
        """Skip the set attention block; the MLP sees the mean reference row."""
        return "no_mrl" in self.ablations

    @property
    def no_context(self) -> bool:
        """Drop the contrastive loss."""
        return "no_context" in self.ablations

    @property
    def effective_contrastive_weight(self) -> float:
        """The contrastive weight, 0 under ``no_context``."""
        return 0.0 if self.no_context else self.contrastive_weight

    def validate(self) -> "TrainConfig":
        """Return self if every value is in range.

        Raises:
            UsageError: Naming the offending key.
        """
        positive = ("k", "m", "candidate_size", "lr", "margin", "temperature",
                    "false_contexts", "tasks_per_step", "max_steps", "eval_interval",
                    "dim", "neighbor_cap", "workers", "pretrain_lr")
        for name in positive:
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.candidate_size < 2:
            raise UsageError(f"candidate_size must be at least 2, got {self.candidate_size}")
        for name in ("inner_lr", "contrastive_weight", "eval_queries", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if not 0 <= self.drop_path < 1:
            raise UsageError(f"drop_path must be in [0, 1), got {self.drop_path}")
        if self.maml_order not in MAML_ORDERS:
            raise UsageError(
                f"maml_order must be one of {MAML_ORDERS}, got {self.maml_order!r}"
            )
        unknown = [a for a in self.ablations if a not in ABLATIONS]
        if unknown:
            raise UsageError(f"Unknown ablations {unknown}, expected any of {ABLATIONS}")
        if len(set(self.ablations)) != len(self.ablations):
            raise UsageError(f"Ablation listed twice: {list(self.ablations)}")
        return self

    def to_dict(self) -> dict[str, Any]:
        """JSON-serializable values by key."""
        data = asdict(self)
        data["ablations"] = list(self.ablations)
        return data

    def to_text(self) -> str:
        """The config in ``key = value`` form, readable by `load_train_config`."""
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        """Short digest of the settings that affect results, with the ablations."""
        data = {k: v for k, v in self.to_dict().items() if k not in _NON_SEMANTIC}
        digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()
        variant = "+".join(sorted(self.ablations)) or "full"
        return f"{digest[:12]}/{variant}"


Config = TypeVar("Config")


def _coerce(field_type, value, key: str):
    if isinstance(value, str):
        value = value.strip()
    try:
        if field_type is bool:
            if isinstance(value, bool):
                return value
            lowered = str(value).lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if field_type is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if field_type is float:
            return float(value)
        if field_type is str:
            return str(value)
        if isinstance(value, str):
            items = [v.strip() for v in value.split(",")]
            return tuple(v for v in items if v)
        return tuple(str(v) for v in value)
    except (TypeError, ValueError):
        raise UsageError(f"Invalid value {value!r} for key {key!r}") from None


def parse_key_values(text: str, /, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines.

    Raises:
        UsageError: On a line without ``=``, naming the line number.
    """
    values = dict()
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{source}:{number}: expected 'key = value', got {line!r}")
        values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


def apply_values(config: Config, values: Mapping[str, Any], /) -> Config:
    """A copy of dataclass *config* with *values* coerced to the field types.

    Raises:
        UsageError: For an unknown key or a value of the wrong type.
    """
    types = {f.name: f.type for f in fields(config)}
    changes = dict()
    for key, value in values.items():
        name = KEY_ALIASES.get(key, key)
        if name not in types:
            raise UsageError(f"Unknown config key {key!r}")
        changes[name] = _coerce(types[name], value, key)
    return replace(config, **changes)


def _read_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"No such config file: {str(path)!r}") from None
    return parse_key_values(text, str(path))


def default_seed(fallback: int = 0, /) -> int:
    """The seed from `SEED_ENV`, or *fallback*."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_train_config(
    path=None,
    /,
    *,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> TrainConfig:
    """Build a validated `TrainConfig`.

    Precedence, lowest first: defaults (seed from `SEED_ENV`), the preset, the
    config file, *overrides*.

    Raises:
        UsageError: For unknown presets or keys and out-of-range values.
    """
    config = TrainConfig(seed=default_seed())
    values = _read_config_file(path) if path is not None else dict()
    preset = values.pop("preset", None) or preset
    if preset is not None:
        if preset not in PRESET_NAMES:
            raise UsageError(f"Unknown preset {preset!r}, expected one of {PRESET_NAMES}")
        config = apply_values(config, get_preset(preset))
    config = apply_values(config, values)
    config = apply_values(config, overrides or dict())
    return config.validate()


def load_synthetic_spec(
    path=None,
    /,
    *,
    overrides: Optional[Mapping[str, Any]] = None,
) -> SyntheticSpec:
    """Build a `SyntheticSpec` from a config file and *overrides*.

    Rules are separated by commas: ``rules = t0 = bg0.bg1, t1 = bg1^-1.bg0``.
    """
    spec = SyntheticSpec(seed=default_seed(SyntheticSpec.seed))
    if path is not None:
        spec = apply_values(spec, _read_config_file(path))
    return apply_values(spec, overrides or dict())


__all__ = (
    "TrainConfig",
    "ABLATIONS",
    "MAML_ORDERS",
    "SEED_ENV",
    "parse_key_values",
    "apply_values",
    "default_seed",
    "load_train_config",
    "load_synthetic_spec",
)
