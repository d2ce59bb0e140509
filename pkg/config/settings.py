"""
Application configuration and settings management.
"""

from pathlib import Path
from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()


class SolverSettings(BaseSettings):
    """Numerical tolerances and iteration limits shared by all solvers."""

    solver_tol: float = Field(
        default=1e-8,
        alias="SOLVER_TOL",
        description="Budget residual tolerance, relative to each user's power budget"
    )

    tie_tol: float = Field(
        default=1e-9,
        alias="SOLVER_TIE_TOL",
        description="Relative tolerance under which two water-level scores are a tie"
    )

    max_iters: int = Field(
        default=10000,
        alias="SOLVER_MAX_ITERS",
        description="Maximum outer iterations of the water-level searches"
    )

    oracle_tol: float = Field(
        default=1e-8,
        alias="ORACLE_TOL",
        description="KKT residual at which the projected-gradient oracle stops"
    )

    oracle_max_iters: int = Field(
        default=50000,
        alias="ORACLE_MAX_ITERS",
        description="Maximum projected-gradient iterations"
    )

    detection_tol: float = Field(
        default=1e-6,
        alias="DETECTION_TOL",
        description="Relative power-profile difference flagged as a deviation"
    )

    grid_weight_tol: float = Field(
        default=1e-12,
        alias="GRID_WEIGHT_TOL",
        description="Tolerance on the sum of grid weights"
    )


class RunnerSettings(BaseSettings):
    """Scenario runner settings."""

    scenario_seed: Optional[int] = Field(
        default=None,
        alias="MACGAME_SEED",
        description="Overrides the seed of every scenario when set"
    )

    threads: int = Field(
        default=1,
        alias="MACGAME_THREADS",
        description="Concurrent fan-point evaluations"
    )

    output_dir: str = Field(
        default="output",
        alias="OUTPUT_DIR",
        description="Default directory for reports and CSV files"
    )


class LoggingSettings(BaseSettings):
    """Logging configuration."""

    log_level: str = Field(
        default="INFO",
        alias="LOG_LEVEL",
        description="Logging level"
    )

    log_format: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        alias="LOG_FORMAT",
        description="Log format string"
    )

    log_file: Optional[str] = Field(
        default=None,
        alias="LOG_FILE",
        description="Log file path"
    )

    log_max_size: int = Field(
        default=10485760,  # 10MB
        alias="LOG_MAX_SIZE",
        description="Maximum log file size in bytes"
    )

    log_backup_count: int = Field(
        default=5,
        alias="LOG_BACKUP_COUNT",
        description="Number of log backup files"
    )


class Settings(BaseSettings):
    """Main application settings."""

    # Environment
    environment: str = Field(
        default="development",
        alias="ENVIRONMENT",
        description="Application environment"
    )

    debug: bool = Field(
        default=False,
        alias="DEBUG",
        description="Enable debug mode"
    )

    # Base directories
    base_dir: Path = Path(__file__).parent.parent
    scenarios_dir: Path = base_dir / "scenarios"

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False
        extra = "ignore"

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        # Nested groups are built on first access so environment overrides
        # applied after import are still picked up
        self._solver = None
        self._runner = None
        self._logging = None

    @property
    def solver(self) -> SolverSettings:
        if self._solver is None:
            self._solver = SolverSettings()
        return self._solver

    @property
    def runner(self) -> RunnerSettings:
        if self._runner is None:
            self._runner = RunnerSettings()
        return self._runner

    @property
    def logging(self) -> LoggingSettings:
        if self._logging is None:
            self._logging = LoggingSettings()
        return self._logging

    @property
    def is_testing(self) -> bool:
        """Check if running in testing environment."""
        return self.environment.lower() == "testing"


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get global settings instance."""
    return settings


def reload_settings():
    """Reload settings from environment."""
    global settings
    settings = Settings()
    return settings
