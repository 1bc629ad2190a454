"""
Process-level settings for the IDFF toolkit.
"""

from typing import Optional

from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings loaded from environment variables (and an optional .env file)."""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Application
    APP_NAME: str = Field(default="idff-toolkit")
    APP_VERSION: str = Field(default="1.0.0")

    # Logging
    LOG_LEVEL: str = Field(default="INFO", validation_alias=AliasChoices("IDFF_LOG", "LOG_LEVEL"))
    LOG_FORMAT: str = Field(default="plain", validation_alias=AliasChoices("IDFF_LOG_FORMAT", "LOG_FORMAT"))
    LOG_DIR: Optional[str] = Field(default=None, validation_alias=AliasChoices("IDFF_LOG_DIR", "LOG_DIR"))

    # Persistence
    CHECKPOINT_FORMAT_VERSION: str = Field(default="idff-ckpt/1")

    # Numerical guards
    DIVERGENCE_THRESHOLD: float = Field(default=1e6, gt=0)
    OT_MAX_BATCH: int = Field(default=1024, ge=1)
    STATE_NORM_LIMIT: float = Field(default=1e4, gt=0)

    # Execution
    DEFAULT_THREADS: int = Field(default=1, ge=1)

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_log_level(cls, value: str) -> str:
        """Accept error/info/debug in any case."""
        level = value.strip().upper()
        if level not in {"ERROR", "WARNING", "INFO", "DEBUG"}:
            raise ValueError(f"unsupported log level '{value}'")
        return level

    @field_validator("LOG_FORMAT")
    @classmethod
    def normalize_log_format(cls, value: str) -> str:
        fmt = value.strip().lower()
        if fmt not in {"plain", "pretty"}:
            raise ValueError(f"unsupported log format '{value}'")
        return fmt


# Global settings instance
settings = Settings()
