"""
Configuration module for the DeepSeek toy mechanism stack
Process-level settings: logging, run directories, numeric defaults
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from typing import Literal, Optional
from pathlib import Path


class Settings(BaseSettings):
    """Application settings using Pydantic 2 BaseSettings"""

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        env_prefix='DSTOY_',
        case_sensitive=False,
        extra='ignore'
    )

    # File paths
    runs_dir: Path = Field(
        default=Path("runs"),
        description="Default parent directory for run outputs"
    )

    # Numerics
    default_precision: Literal["float64", "float32"] = Field(
        default="float64",
        description="Floating point mode used when a run config does not pin one"
    )
    std_floor: float = Field(
        default=1e-8,
        description="Reward std below which group advantages are zeroed"
    )
    rope_base: float = Field(default=10000.0, description="RoPE base frequency")
    init_std: float = Field(default=0.02, description="Std of normal weight init")

    # Gradient checking
    gradcheck_step: float = Field(default=1e-5, description="Central difference step h")
    gradcheck_floor: float = Field(
        default=1e-3,
        description="Absolute floor of the relative-error denominator"
    )

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Optional[Path] = Field(default=Path("dstoy.log"))


# Create global settings instance
settings = Settings()
