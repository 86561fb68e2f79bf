"""Runtime settings for noveltyswarm"""

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process-level settings with environment variable support"""

    # Execution
    workers: int = Field(default=1, ge=1, description="Evaluation worker processes")
    progress: bool = Field(default=True, description="Show progress bars in the CLI")

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="console", description="Log renderer: json or console")

    # Development
    debug: bool = Field(default=False, description="Debug mode")

    @field_validator('log_format')
    @classmethod
    def check_log_format(cls, v):
        """Only the two structlog renderers are supported"""
        v = v.lower()
        if v not in ("json", "console"):
            raise ValueError("log_format must be 'json' or 'console'")
        return v

    @field_validator('log_level')
    @classmethod
    def check_log_level(cls, v):
        """Normalise level names"""
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v!r}")
        return v

    model_config = {
        "env_prefix": "NOVELTYSWARM_",
        "env_file": None,
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore"
    }


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get runtime settings"""
    return settings


def reload_settings() -> Settings:
    """Reload settings from environment"""
    global settings
    settings = Settings()
    return settings
