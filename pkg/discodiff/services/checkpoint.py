"""
Versioned JSON checkpoints for models, priors, optimizer and RNG state
"""

import base64
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..config import RunConfig
from ..engine import Adam, Module
from ..schemas import ArrayPayload, Checkpoint, CheckpointKind, OptimizerPayload

logger = logging.getLogger(__name__)

LITTLE_ENDIAN_F64 = np.dtype("<f8")


def encode_array(array: np.ndarray) -> ArrayPayload:
    array = np.ascontiguousarray(array, dtype=LITTLE_ENDIAN_F64)
    return ArrayPayload(shape=list(array.shape), data=base64.b64encode(array.tobytes()).decode("ascii"))


def decode_array(payload: ArrayPayload) -> np.ndarray:
    raw = base64.b64decode(payload.data)
    array = np.frombuffer(raw, dtype=LITTLE_ENDIAN_F64)
    expected = int(np.prod(payload.shape)) if payload.shape else 1
    if array.size != expected:
        raise ValueError(f"Array payload holds {array.size} values, shape {payload.shape} needs {expected}")
    return array.astype(np.float64).reshape(payload.shape)


def encode_optimizer(optimizer: Adam) -> OptimizerPayload:
    state = optimizer.state
    return OptimizerPayload(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        clip_norm=state.clip_norm,
        step=state.step,
        m={name: encode_array(a) for name, a in state.m.items()},
        v={name: encode_array(a) for name, a in state.v.items()},
    )


def build_checkpoint(module: Module, config: RunConfig, kind: CheckpointKind, rng: np.random.Generator,
                     optimizer: Optional[Adam] = None, step: int = 0,
                     metadata: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """Snapshot parameters, optimizer moments and the generator state"""
    return Checkpoint(
        kind=kind,
        arm=config.arm.value,
        step=step,
        config_hash=config.config_hash(),
        config=config.as_dict(),
        params={name: encode_array(a) for name, a in module.state_dict().items()},
        optimizer=encode_optimizer(optimizer) if optimizer is not None else None,
        rng_state=rng.bit_generator.state,
        metadata=metadata or {},
    )


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write atomically: a failed write leaves any previous file intact"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(checkpoint.model_dump_json(indent=1))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Saved {checkpoint.kind.value} checkpoint at step {checkpoint.step}: {path}")
    return path


def load_checkpoint(path: Union[str, Path], kind: Optional[CheckpointKind] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    checkpoint = Checkpoint.model_validate_json(path.read_text())
    if kind is not None and checkpoint.kind != kind:
        raise ValueError(f"{path} holds a {checkpoint.kind.value} checkpoint, expected {kind.value}")
    return checkpoint


def restore_parameters(module: Module, checkpoint: Checkpoint) -> None:
    module.load_state_dict({name: decode_array(p) for name, p in checkpoint.params.items()})


def restore_optimizer(optimizer: Adam, checkpoint: Checkpoint) -> None:
    payload = checkpoint.optimizer
    if payload is None:
        raise ValueError("Checkpoint carries no optimizer state")
    state = optimizer.state
    state.lr, state.beta1, state.beta2, state.eps = payload.lr, payload.beta1, payload.beta2, payload.eps
    state.clip_norm = payload.clip_norm
    state.step = payload.step
    state.m = {name: decode_array(a) for name, a in payload.m.items()}
    state.v = {name: decode_array(a) for name, a in payload.v.items()}


def restore_rng(checkpoint: Checkpoint) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = checkpoint.rng_state
    return np.random.Generator(bit_generator)


def check_config_hash(checkpoint: Checkpoint, config: RunConfig, path: Union[str, Path, None] = None) -> bool:
    """Warn (never fail) when a checkpoint was written under a different config"""
    current = config.config_hash()
    if checkpoint.config_hash != current:
        where = f" {path}" if path is not None else ""
        logger.warning(f"Checkpoint{where} was written with config {checkpoint.config_hash}, current config is "
                       f"{current}")
        return False
    return True
