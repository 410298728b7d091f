from pydantic_settings import BaseSettings
from pydantic import ConfigDict
from typing import Literal, Optional


class Settings(BaseSettings):
    # Logging configuration
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    log_json: bool = True
    log_file: Optional[str] = None

    # Execution configuration
    default_jobs: int = 1

    # Output configuration
    float_digits: int = 6  # significant digits in report.json / CSV artifacts
    metrics_file: Optional[str] = None  # Prometheus text dump after each command

    model_config = ConfigDict(
        env_prefix="RUEVAL_",
        env_file=".env",
        env_file_encoding="utf-8",
    )


settings = Settings()
