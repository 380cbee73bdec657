"""
Configuration management for the privacy signaling simulator.

Only infrastructure settings come from the environment. Simulation
parameters (camera, noise, tracker, modality tuning) are read from the
scenario file alone so that a run is reproducible from that file.
"""
from functools import lru_cache

from pydantic import ConfigDict
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables"""

    # Application Configuration
    app_host: str = "0.0.0.0"
    app_port: int = 8080
    debug: bool = False
    log_level: str = "INFO"

    # Output locations
    log_dir: str = "logs"

    # Batch fan-out (process pool size for run_batch)
    max_workers: int = 1

    # Database (optional for persisted trial results)
    database_url: str | None = None

    model_config = ConfigDict(env_file=".env", case_sensitive=False)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()
