"""
Second-stage task: fit the latent prior on encoder latents
"""

import logging
from pathlib import Path
from typing import Any, Dict, Union

from ..config import Arm, RunConfig
from ..schemas import CheckpointKind
from ..services.checkpoint import build_checkpoint, save_checkpoint
from ..services.latent_prior import AutoregressivePrior, CategoricalPrior, ar_train, latent_histogram, total_variation
from .common import PRIOR_FILE, arm_dir, load_dataset, load_model, new_prior, prepare_output, stream_rng

logger = logging.getLogger(__name__)


def cmd_train_prior(config: RunConfig, out: Union[str, Path]) -> Dict[str, Any]:
    """
    Fit the prior for the disco arm and save out/disco/prior.ckpt.json

    Returns:
        Dict with the prior path, final log-likelihood and, for a single
        latent, the TV distance to the empirical latent histogram

    Raises:
        ValueError: For the baseline arm, which has no latents
        FileNotFoundError: If the first-stage checkpoint is missing
    """
    if config.arm == Arm.BASELINE:
        raise ValueError("The baseline arm has no latents to model; train the prior for arm=disco")
    out = prepare_output(config, out)
    dataset = load_dataset(config, out)
    model, _ = load_model(config, out, Arm.DISCO)

    rng = stream_rng(config.seed, "prior")
    prior = new_prior(config, rng)
    fit = ar_train(prior, model.encoder, dataset.points, rng, tau_extract=config.tau_extract,
                   epochs=config.prior_epochs)

    result: Dict[str, Any] = {
        "prior": str(arm_dir(out, Arm.DISCO) / PRIOR_FILE),
        "kind": "categorical" if isinstance(prior, CategoricalPrior) else "autoregressive",
        "log_likelihood": fit.final_log_likelihood,
    }
    if isinstance(prior, CategoricalPrior):
        tv = total_variation(prior.probabilities, latent_histogram(fit.latents[:, 0], config.codebook_size))
        result["tv"] = tv
        logger.info(f"TV distance between prior and latent histogram: {tv:.6f}")

    optimizer = prior.optimizer if isinstance(prior, AutoregressivePrior) else None
    checkpoint = build_checkpoint(prior, config, CheckpointKind.PRIOR, rng, optimizer=optimizer,
                                  step=len(fit.history), metadata={"kind": result["kind"]})
    save_checkpoint(checkpoint, result["prior"])
    return result
