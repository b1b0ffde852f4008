# Process settings from the environment, plus loading of experiment documents

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Union

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from netmax import __version__
from netmax.core.exceptions import ConfigInvalidError
from netmax.models.experiment import ExperimentConfig


class Settings(BaseSettings):
    # Application settings
    project_name: str = "NetMax Policy Service"
    version: str = __version__
    debug: bool = Field(default=False, description="Enable debug mode")

    # Server settings
    host: str = Field(default="0.0.0.0", description="Host to bind to")
    port: int = Field(default=8000, description="Port to bind to")

    # Security settings
    api_key: Optional[str] = Field(default=None, description="API key for authentication; unset disables auth")
    cors_origins: Union[List[str], str] = Field(default=["*"], description="Allowed CORS origins")
    rate_limit_per_minute: int = Field(default=100, description="Rate limit per minute")

    # Logging settings
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="json", description="Log format (json or text)")

    # Verification and sweep settings
    verify_topology_count: int = Field(default=200, ge=1, description="Random topologies in the policy suite")
    verify_seed_count: int = Field(default=100, ge=1, description="Seeds averaged by the bounds suite")
    sweep_workers: int = Field(default=1, ge=1, description="Worker processes for seed sweeps")

    model_config = SettingsConfigDict(
        env_prefix="NETMAX_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("cors_origins", mode="before")
    @classmethod
    def parse_cors_origins(cls, v):
        if isinstance(v, str):
            return [origin.strip() for origin in v.split(",")]
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v):
        if v.lower() not in ("json", "text"):
            raise ValueError("Log format must be 'json' or 'text'")
        return v.lower()


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Global settings instance
settings = get_settings()


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides to a raw config document in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalidError(f"Override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigInvalidError(f"Override '{item}' has an empty key")
        node = document
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigInvalidError(f"Override '{item}' descends into non-object '{part}'")
            node = child
        node[parts[-1]] = _parse_override_value(raw)
    return document


def parse_experiment_config(document: Mapping[str, Any], overrides: Sequence[str] = ()) -> ExperimentConfig:
    data = apply_overrides(json.loads(json.dumps(document)), overrides)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigInvalidError("Experiment config failed validation", errors=e.errors(include_url=False)) from e


def load_experiment_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read, override and validate an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigInvalidError(f"Cannot read config file {path}: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigInvalidError(
            f"Malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno
        ) from e
    if not isinstance(document, dict):
        raise ConfigInvalidError(f"Config root in {path} must be a JSON object")
    return parse_experiment_config(document, overrides)
