"""
Configuration settings for DisCo-Diff toy experiments
"""

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    # Application
    app_name: str = "DisCo-Diff Toy Lab"
    app_version: str = "0.1.0"
    debug: bool = False
    environment: str = "development"

    # Output
    output_dir: str = "runs"
    checkpoint_every: int = Field(1000, ge=1)

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"
    progress: bool = True

    @field_validator("log_level")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    model_config = SettingsConfigDict(env_file=".env", env_prefix="DISCO_", case_sensitive=False, extra="ignore")


class Arm(str, Enum):
    """Which model a run trains"""

    DISCO = "disco"
    BASELINE = "baseline"


class EmbeddingInit(str, Enum):
    """Starting values of the latent embedding tables"""

    NORMAL = "normal"
    KMEANS = "kmeans"


class JacobianTarget(str, Enum):
    """Network output whose input-Jacobian is measured"""

    DENOISER = "D"
    SCORE_HEAD = "G"


class RunConfig(BaseSettings):
    """
    Experiment configuration

    Read from a flat key=value file plus explicit overrides (CLI flags win).
    Environment variables are deliberately not a source. Unknown keys are
    rejected.
    """

    seed: int = 0
    arm: Arm = Arm.DISCO

    # Dataset
    n_per_component: int = Field(1000, ge=1)
    sigma_component: float = Field(0.2, gt=0)

    # Networks
    hidden_width: int = Field(64, ge=1)
    denoiser_depth: int = Field(4, ge=1)
    encoder_width: int = Field(64, ge=1)
    encoder_depth: int = Field(3, ge=1)
    time_embedding_dim: int = Field(16, ge=2)
    num_latents: int = Field(1, ge=1)
    codebook_size: int = Field(8, ge=2)
    embedding_init: EmbeddingInit = EmbeddingInit.KMEANS

    # First-stage training
    tau_train: float = Field(1.0, gt=0)
    tau_extract: float = Field(0.01, gt=0)
    p_drop: float = Field(0.1, ge=0, le=1)
    train_steps: int = Field(20000, ge=0)
    batch_size: int = Field(512, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    grad_clip: bool = False
    grad_clip_norm: float = Field(100.0, gt=0)

    # Second-stage prior
    prior_epochs: int = Field(50, ge=1)
    prior_batch_size: int = Field(256, ge=1)
    prior_width: int = Field(64, ge=1)
    prior_depth: int = Field(3, ge=1)
    prior_temperature: float = Field(1.0, ge=0)

    # Diffusion
    sigma_min: float = Field(0.002, gt=0)
    sigma_max: float = Field(80.0, gt=0)
    rho: float = Field(7.0, ge=1)
    p_mean: float = -1.2
    p_std: float = Field(1.2, ge=0)
    sigma_data: Optional[float] = Field(None, gt=0)

    # Sampling
    n_steps: int = Field(50, ge=2)
    cfg_scale: float = 1.0
    systematic_latents: bool = True
    n_samples: int = Field(1000, ge=0)

    # Analysis
    n_trajectories: int = Field(256, ge=0)
    jacobian_probes: int = Field(1024, ge=1)
    jacobian_target: JacobianTarget = JacobianTarget.DENOISER
    curvature_dt: float = Field(0.001, gt=0)
    loss_bins: int = Field(12, ge=1)
    loss_probes_per_bin: int = Field(2048, ge=1)

    @model_validator(mode="after")
    def check_sigma_range(self) -> "RunConfig":
        if not self.sigma_min < self.sigma_max:
            raise ValueError(f"sigma_min ({self.sigma_min}) must be below sigma_max ({self.sigma_max})")
        return self

    model_config = SettingsConfigDict(extra="forbid", case_sensitive=False, env_file=None)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, dotenv_settings

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, **overrides: Any) -> "RunConfig":
        """
        Build a config from an optional key=value file and overrides

        Args:
            path: Config file; missing file raises FileNotFoundError
            overrides: Field values that take precedence over the file

        Returns:
            Validated RunConfig
        """
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if path is None:
            return cls(**overrides)
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file not found: {path}")
        return cls(_env_file=str(path), **overrides)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Validated copy with some fields replaced"""
        return type(self)(**{**self.as_dict(), **overrides})

    def as_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """md5 of the canonical JSON form"""
        payload = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.md5(payload.encode()).hexdigest()

    def to_env_text(self) -> str:
        """Render as the flat key=value format `load` reads"""
        lines = []
        for key, value in sorted(self.as_dict().items()):
            if value is None:
                continue
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


# Global settings instance
settings = Settings()
