from pathlib import Path

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Environment settings."""

    PHIBP_THREADS: int = 1
    PHIBP_LOG_LEVEL: str = "WARNING"
    PHIBP_PROGRESS: bool = False

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=(str(Path.home() / ".env.default"), ".env"),
        extra="ignore",
    )

    @field_validator("PHIBP_THREADS", mode="before")
    def floor_threads(cls, v):
        """
        Coerce the worker cap to a positive integer.

        Empty or non-positive values fall back to a single worker.

        Args:
            v: The raw value of `PHIBP_THREADS`.

        Returns:
            int: The number of workers allowed.
        """
        if v is None or v == "":
            return 1
        return max(1, int(v))

    @field_validator("PHIBP_LOG_LEVEL", mode="before")
    def upper_level(cls, v):
        return str(v).upper()


settings = Settings()
