"""
Run configuration.

Environment (read after load_dotenv):
    KG_LINKER_THREADS     parallelism cap for graph extraction (default 1)
    KG_LINKER_LOG_LEVEL   see logging_config
    KG_LINKER_JSON_LOGS   see logging_config

Hyperparameters come from a profile, then an optional flat key-value file
(`key = value`, '#' comments), then CLI flags; later sources win. Keys are
the field names of ModelConfig and TrainConfig; anything else is an error.
"""
import os
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from .errors import ConfigError, MissingFileError
from .schemas import ModelConfig, SynthSpec, TrainConfig

load_dotenv()

PROFILES: Dict[str, Dict[str, object]] = {
    "paper": {
        "dim": 64,
        "t_max": 25,
        "batch_size": 10,
        "steps_per_epoch": 128,
        "epochs": 2000,
        "lr": 2e-5,
        "max_path_length": 6,
    },
    "desk": {
        "dim": 32,
        "t_max": 8,
        "batch_size": 10,
        "steps_per_epoch": 300,
        "epochs": 1,
        "lr": 5e-3,
        "lr_schedule": "cosine",
        # planted rules are two facts long
        "max_path_length": 2,
    },
}
PROFILE_ALIASES = {"full": "paper"}

_TUPLE_KEYS = {"msg_layers", "vote_layers", "labels"}


def profile_names() -> List[str]:
    return sorted(PROFILES) + sorted(PROFILE_ALIASES)


def env_threads() -> int:
    raw = os.getenv("KG_LINKER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"KG_LINKER_THREADS must be an integer, got {raw!r}") from None


def parse_config_text(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_number}: empty key")
        values[key] = value
    return values


def load_config_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise MissingFileError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f, source=path)


def _coerce(key: str, value):
    if key in _TUPLE_KEYS and isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if isinstance(value, str) and value.lower() in ("none", "null", ""):
        return None
    return value


def _build(model: type, values: Mapping[str, object]) -> BaseModel:
    try:
        return model(**values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid value for '{where}': {first['msg']}") from None


def resolve_config(
    profile: str = "desk",
    file_values: Optional[Mapping[str, object]] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> Tuple[ModelConfig, TrainConfig]:
    """
    Merge profile < file < overrides into validated configs.

    Raises:
        ConfigError: unknown profile, unknown key or invalid value
    """
    profile = PROFILE_ALIASES.get(profile, profile)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile '{profile}', expected one of {profile_names()}")

    merged: Dict[str, object] = dict(PROFILES[profile])
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    model_values: Dict[str, object] = {}
    train_values: Dict[str, object] = {}
    for key, value in merged.items():
        if key in ModelConfig.model_fields:
            model_values[key] = _coerce(key, value)
        elif key in TrainConfig.model_fields:
            train_values[key] = _coerce(key, value)
        else:
            raise ConfigError(f"unknown config key '{key}'")

    return _build(ModelConfig, model_values), _build(TrainConfig, train_values)


def resolve_resume_config(
    model_config: ModelConfig,
    train_config: TrainConfig,
    file_values: Optional[Mapping[str, object]] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> TrainConfig:
    """
    Merge a checkpoint's train config < file < overrides.

    The architecture stays the checkpoint's: a model key may only repeat
    the stored value.

    Raises:
        ConfigError: unknown key, invalid value, or a model key that
            disagrees with the checkpoint
    """
    merged: Dict[str, object] = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    stored = model_config.model_dump()
    train_values = train_config.model_dump()
    for key, value in merged.items():
        if key in ModelConfig.model_fields:
            requested = getattr(_build(ModelConfig, {**stored, key: _coerce(key, value)}), key)
            if requested != getattr(model_config, key):
                raise ConfigError(
                    f"'{key}' is {getattr(model_config, key)!r} in the checkpoint, cannot resume with {requested!r}"
                )
        elif key in TrainConfig.model_fields:
            train_values[key] = _coerce(key, value)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return _build(TrainConfig, train_values)


def resolve_synth_spec(file_values: Mapping[str, object], overrides: Optional[Mapping[str, object]] = None) -> SynthSpec:
    merged = dict(file_values)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in merged:
        if key not in SynthSpec.model_fields:
            raise ConfigError(f"unknown synth spec key '{key}'")
    return _build(SynthSpec, {k: _coerce(k, v) for k, v in merged.items()})


def dump_config_text(*configs: BaseModel) -> str:
    """Serialise configs as flat `key = value` lines; parse_config_text reads them back."""
    lines = []
    for cfg in configs:
        for key, value in cfg.model_dump().items():
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(values: Mapping[str, str]) -> Tuple[ModelConfig, TrainConfig]:
    """Rebuild configs from a dumped key-value mapping without applying any profile."""
    model_values = {k: _coerce(k, v) for k, v in values.items() if k in ModelConfig.model_fields}
    train_values = {k: _coerce(k, v) for k, v in values.items() if k in TrainConfig.model_fields}
    unknown = set(values) - set(model_values) - set(train_values)
    if unknown:
        raise ConfigError(f"unknown config key '{sorted(unknown)[0]}'")
    return _build(ModelConfig, model_values), _build(TrainConfig, train_values)
