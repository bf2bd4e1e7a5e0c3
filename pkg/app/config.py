"""
Workbench settings.

Precedence (highest first): CLI flags, key=value config file, CSYN_* environment
variables (nested with "__", e.g. CSYN_SIM__R_LOAD=5), schema defaults.
"""

from pathlib import Path
from typing import Annotated, Any, Mapping, Optional

from pydantic import TypeAdapter, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError
from app.schemas.config import (
    FULL_SCALE_N_UNIQUE,
    SECTIONS,
    DataConfig,
    DecodeConfig,
    EvalConfig,
    ModelConfig,
    RunConfig,
    SimConfig,
    TrainConfig,
)

DEFAULT_CONFIG_FILE = "workbench.conf"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="CSYN_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    PROJECT_NAME: str = "Circuit Synthesis Workbench"
    VERSION: str = "1.0.0"

    sim: SimConfig = SimConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    decode: DecodeConfig = DecodeConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()
    run: RunConfig = RunConfig()

    @model_validator(mode="before")
    @classmethod
    def _full_scale_eval_size(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        train = data.get("train")
        preset = train.get("preset") if isinstance(train, dict) else getattr(train, "preset", None)
        evaluation = data.get("eval")
        if preset == "full" and (evaluation is None or isinstance(evaluation, dict)):
            evaluation = dict(evaluation or {})
            evaluation.setdefault("n_unique", FULL_SCALE_N_UNIQUE)
            data = {**data, "eval": evaluation}
        return data


def _field_adapter(section: str, key: str) -> TypeAdapter:
    info = SECTIONS[section].model_fields[key]
    if info.metadata:
        return TypeAdapter(Annotated[(info.annotation, *info.metadata)])
    return TypeAdapter(info.annotation)


def parse_config_text(text: str) -> dict[str, dict[str, Any]]:
    """Parse `section.key = value` lines into validated per-section dicts."""
    values: dict[str, dict[str, Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", lineno, raw.strip())
        key, value = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown section in key {key!r}", lineno, raw.strip())
        if name not in SECTIONS[section].model_fields:
            raise ConfigError(f"unknown key {key!r}", lineno, raw.strip())
        try:
            parsed = _field_adapter(section, name).validate_python(value)
        except ValidationError as e:
            reason = e.errors()[0]["msg"]
            raise ConfigError(f"bad value for {key}: {reason}", lineno, raw.strip()) from None
        values.setdefault(section, {})[name] = parsed
    return values


def _explicit(model: Any) -> dict[str, Any]:
    return {name: getattr(model, name) for name in model.model_fields_set}


def load_settings(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> Settings:
    """Build Settings from env, an optional config file and flag overrides.

    With no explicit path, `workbench.conf` in the working directory is read if present.
    """
    if config_path is None and Path(DEFAULT_CONFIG_FILE).exists():
        config_path = Path(DEFAULT_CONFIG_FILE)
    try:
        base = Settings()
    except ValidationError as e:
        raise ConfigError(f"invalid environment configuration: {e.errors()[0]['msg']}") from None

    merged: dict[str, dict[str, Any]] = {
        section: _explicit(getattr(base, section)) for section in SECTIONS
    }
    if config_path is not None:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {config_path}: {e.strerror}") from None
        for section, values in parse_config_text(text).items():
            merged[section].update(values)
    for section, values in (overrides or {}).items():
        merged[section].update({k: v for k, v in values.items() if v is not None})

    try:
        return Settings(**merged)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(part) for part in err["loc"])
        raise ConfigError(f"{where}: {err['msg']}") from None
