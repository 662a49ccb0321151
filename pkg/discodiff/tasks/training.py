"""
First-stage training task: denoiser and encoder, either arm
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..config import Arm, RunConfig, settings
from ..engine import NonFiniteError
from ..schemas import CheckpointKind
from ..services.checkpoint import (
    build_checkpoint,
    check_config_hash,
    load_checkpoint,
    restore_optimizer,
    restore_parameters,
    restore_rng,
    save_checkpoint,
)
from ..services.disco import DiscoTrainer, extract_latents, mode_purity
from ..services.plotting import plot_losses
from .common import (
    MODEL_FILE,
    arm_dir,
    build_model,
    diffusion_config,
    load_dataset,
    prepare_output,
    progress_bar,
    resolve_sigma_data,
    stream_rng,
)

logger = logging.getLogger(__name__)

LOSS_FILE = "train_loss.csv"


def _append_losses(path: Path, start_step: int, losses: List[float], fresh: bool) -> None:
    with open(path, "w" if fresh else "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if fresh:
            writer.writerow(["step", "loss"])
        writer.writerows([start_step + i + 1, f"{loss:.17g}"] for i, loss in enumerate(losses))


def _read_losses(path: Path) -> List[float]:
    if not path.is_file():
        return []
    with open(path, newline="") as f:
        return [float(row["loss"]) for row in csv.DictReader(f)]


def cmd_train(config: RunConfig, out: Union[str, Path], resume: bool = False,
              checkpoint_every: Optional[int] = None) -> Dict[str, Any]:
    """
    Train the configured arm and checkpoint it under out/<arm>/

    Args:
        config: Run configuration; `arm` selects disco or baseline
        out: Output directory holding data.csv
        resume: Continue from out/<arm>/model.ckpt.json if present
        checkpoint_every: Steps between checkpoints (default from settings)

    Returns:
        Dict with the checkpoint path, step count, final loss and, for the
        disco arm, the mode purity of the extracted latents

    Raises:
        NonFiniteError: On a non-finite loss or gradient; the last good
            checkpoint is left in place
    """
    out = prepare_output(config, out)
    dataset = load_dataset(config, out)
    sigma_data = resolve_sigma_data(config, dataset.points)
    arm = config.arm
    target = arm_dir(out, arm)
    target.mkdir(parents=True, exist_ok=True)
    ckpt_path = target / MODEL_FILE
    loss_path = target / LOSS_FILE

    model = build_model(config, sigma_data, stream_rng(config.seed, "init"), points=dataset.points)
    trainer = DiscoTrainer(
        model,
        diffusion_config(config, sigma_data),
        stream_rng(config.seed, "train"),
        arm=arm,
        tau=config.tau_train,
        p_drop=config.p_drop,
        batch_size=config.batch_size,
        lr=config.learning_rate,
        clip_norm=config.grad_clip_norm if config.grad_clip else None,
    )

    fresh = True
    if resume and ckpt_path.is_file():
        checkpoint = load_checkpoint(ckpt_path, CheckpointKind.MODEL)
        check_config_hash(checkpoint, config, ckpt_path)
        restore_parameters(model, checkpoint)
        restore_optimizer(trainer.optimizer, checkpoint)
        trainer.rng = restore_rng(checkpoint)
        sigma_data = float(checkpoint.metadata.get("sigma_data", sigma_data))
        fresh = False
        logger.info(f"Resuming {arm.value} training from step {trainer.step_count}")
    elif resume:
        logger.warning(f"Nothing to resume at {ckpt_path}, starting from scratch")

    metadata = {"sigma_data": sigma_data, "num_latents": config.num_latents, "codebook_size": config.codebook_size}

    def save() -> None:
        save_checkpoint(
            build_checkpoint(model, config, CheckpointKind.MODEL, trainer.rng, optimizer=trainer.optimizer,
                             step=trainer.step_count, metadata=metadata),
            ckpt_path,
        )

    if fresh:
        save()
        _append_losses(loss_path, 0, [], fresh=True)

    every = checkpoint_every or settings.checkpoint_every
    remaining = max(config.train_steps - trainer.step_count, 0)
    last_loss = None
    with progress_bar(remaining, f"train {arm.value}") as bar:
        while remaining > 0:
            chunk = min(every, remaining)
            start = trainer.step_count
            try:
                losses = trainer.train(dataset.points, chunk, progress=bar)
            except NonFiniteError:
                logger.error(f"Training aborted; last good checkpoint kept at {ckpt_path}")
                raise
            _append_losses(loss_path, start, losses, fresh=False)
            save()
            remaining -= chunk
            last_loss = losses[-1]

    result: Dict[str, Any] = {
        "arm": arm.value,
        "checkpoint": str(ckpt_path),
        "steps": trainer.step_count,
        "final_loss": last_loss,
    }
    if arm == Arm.DISCO:
        rng = stream_rng(config.seed, "analysis")
        latents = extract_latents(model.encoder, dataset.points, config.tau_extract, rng)
        result["mode_purity"] = mode_purity(latents[:, 0], dataset.labels)
        logger.info(f"Mode purity of the first latent: {result['mode_purity']:.3f}")
    plot_losses(target / "train_loss.svg", _read_losses(loss_path), description=config.to_env_text())
    return result
