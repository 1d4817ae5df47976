from __future__ import annotations

from functools import lru_cache

from dotenv import find_dotenv, load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv(find_dotenv(usecwd=True), override=False)


class Settings(BaseSettings):
    """Process-wide knobs read from the environment (prefix NVSIM_) or `.env`."""

    model_config = SettingsConfigDict(env_prefix="NVSIM_", extra="ignore")

    seed: int = 0
    log_level: str = "INFO"
    log_file: str = ""
    # full-mode drive integration refuses pulses longer than this many carrier cycles
    max_full_cycles: float = 1e7
    default_rabi: float = 5e6
    optical_dt: float = 0.5e-9
    readout_window: float = 300e-9


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def reset_settings() -> None:
    get_settings.cache_clear()
