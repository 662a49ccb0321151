"""
Pydantic schemas for checkpoints and metric reports
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointKind(str, Enum):
    """What a checkpoint holds"""

    MODEL = "model"
    PRIOR = "prior"


# Base schemas
class BaseSchema(BaseModel):
    """Base schema with common fields"""

    model_config = ConfigDict(from_attributes=True)


# Checkpoint schemas
class ArrayPayload(BaseSchema):
    """float64 array as base64 of its little-endian bytes"""

    shape: List[int]
    data: str


class OptimizerPayload(BaseSchema):
    lr: float = Field(..., gt=0)
    beta1: float
    beta2: float
    eps: float
    clip_norm: Optional[float] = None
    step: int = Field(..., ge=0)
    m: Dict[str, ArrayPayload] = Field(default_factory=dict)
    v: Dict[str, ArrayPayload] = Field(default_factory=dict)


class Checkpoint(BaseSchema):
    format_version: int = CHECKPOINT_FORMAT_VERSION
    kind: CheckpointKind
    arm: str
    step: int = Field(0, ge=0)
    config_hash: str
    config: Dict[str, Any]
    params: Dict[str, ArrayPayload]
    optimizer: Optional[OptimizerPayload] = None
    rng_state: Dict[str, Any]
    metadata: Dict[str, Any] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @field_validator("format_version")
    @classmethod
    def check_format_version(cls, v: int) -> int:
        if v != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"Unsupported checkpoint format version {v}")
        return v


# Report schemas
class ProfilePoint(BaseSchema):
    t: float = Field(..., gt=0)
    value: float = Field(..., ge=0)
    n: int = Field(..., ge=0)


class ArmReport(BaseSchema):
    arm: str
    w2: Optional[float] = Field(None, ge=0)
    n_samples: int = Field(..., ge=0)
    mean_curvature: Optional[float] = Field(None, ge=0)
    mean_jacobian_sq: Optional[float] = Field(None, ge=0)
    curvature: List[ProfilePoint] = Field(default_factory=list)
    jacobian_D: List[ProfilePoint] = Field(default_factory=list)
    jacobian_G: List[ProfilePoint] = Field(default_factory=list)
    loss_vs_t: List[ProfilePoint] = Field(default_factory=list)
    mode_purity: Optional[float] = Field(None, ge=0, le=1)
    prior_tv: Optional[float] = Field(None, ge=0, le=1)


class MetricReport(BaseSchema):
    seed: int
    config_hash: str
    config: Dict[str, Any]
    jacobian_target: str = "D"
    arms: Dict[str, ArmReport]
    comparison: Dict[str, Optional[float]] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.utcnow)


class SeedResult(BaseSchema):
    seed: int
    w2_disco: float = Field(..., ge=0)
    w2_baseline: float = Field(..., ge=0)


class CompareReport(BaseSchema):
    seeds: List[int]
    config_hash: str
    config: Dict[str, Any]
    results: List[SeedResult]
    median_w2_disco: float = Field(..., ge=0)
    median_w2_baseline: float = Field(..., ge=0)
    created_at: datetime = Field(default_factory=datetime.utcnow)
