from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Central application settings using Pydantic v2.
    Loads variables from environment or .env file.
    """
    # Project Metadata
    PROJECT_NAME: str = Field(default="ginv-harmonic", description="Name of the project/application")
    LOGGING_DEFAULT_LEVEL: str = Field(default="INFO", description="Default logging level for the application")
    LOGGING_APP_ID: str = Field(default="ginv", description="Name for the logging configuration")
    LOGGING_FILE_NAME: str = Field(default="", description="Filename for logging output, empty disables file logging")
    LOGGING_MAX_FILE_SIZE: int = Field(default=10, description="Maximum size of the log file in MB")
    LOGGING_BACKUP_COUNT: int = Field(default=3, description="Number of backup log files to keep")
    LOGGING_DELIMITER: str = Field(default="|", description="Delimiter used in log entries")
    LOGGING_DATE_FORMAT: str = Field(default="%Y-%m-%d %H:%M:%S", description="Date format used in log entries")

    # Numerics
    MAX_WORKERS: int = Field(default=4, ge=1, description="Thread pool size for per-scale and per-suite work")

    # Pydantic Configuration
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Returns a cached instance of the settings.
    This pattern allows for easy mocking in tests (call get_settings.cache_clear()).
    """
    return Settings()
