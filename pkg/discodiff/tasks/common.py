"""
Shared plumbing for the command tasks: output layout, RNG streams and
model/prior reconstruction from checkpoints
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..config import Arm, EmbeddingInit, RunConfig, settings
from ..schemas import Checkpoint, CheckpointKind
from ..services.checkpoint import check_config_hash, load_checkpoint, restore_parameters
from ..services.datagen import Dataset, default_mixture, read_dataset_csv, sample_dataset, write_dataset_csv
from ..services.diffusion import DiffusionConfig, ToyDenoiser, empirical_sigma_data
from ..services.disco import DiscoModel, Encoder
from ..services.latent_prior import LatentPrior, build_prior

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_FILE = "effective_config.env"
DATA_FILE = "data.csv"
MODEL_FILE = "model.ckpt.json"
PRIOR_FILE = "prior.ckpt.json"

# Independent random streams derived from the run seed
STREAMS = {
    "init": 1,
    "train": 2,
    "prior": 3,
    "reference": 4,
    "trajectories": 5,
    "analysis": 6,
    "embedding": 7,
    "data": 8,
    "sample": 9,
}


def stream_seed(seed: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, STREAMS[stream]])


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, stream))


def prepare_output(config: RunConfig, out: Union[str, Path]) -> Path:
    """Create the output directory and echo the effective config into it"""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / EFFECTIVE_CONFIG_FILE).write_text(config.to_env_text())
    return out


def arm_dir(out: Path, arm: Union[Arm, str]) -> Path:
    return Path(out) / Arm(arm).value


def progress_bar(total: int, desc: str) -> tqdm:
    return tqdm(total=total, desc=desc, disable=not settings.progress, leave=False)


def load_dataset(config: RunConfig, out: Path) -> Dataset:
    """Read out/data.csv, generating it from the config when absent"""
    path = Path(out) / DATA_FILE
    if path.is_file():
        return read_dataset_csv(path)
    logger.info(f"No dataset at {path}, generating one from the config")
    dataset = sample_dataset(default_mixture(config.sigma_component), config.n_per_component,
                             stream_seed(config.seed, "data"))
    write_dataset_csv(dataset, path)
    return dataset


def diffusion_config(config: RunConfig, sigma_data: float) -> DiffusionConfig:
    return DiffusionConfig(
        sigma_min=config.sigma_min,
        sigma_max=config.sigma_max,
        rho=config.rho,
        p_mean=config.p_mean,
        p_std=config.p_std,
        sigma_data=sigma_data,
    )


def resolve_sigma_data(config: RunConfig, points: np.ndarray) -> float:
    return config.sigma_data if config.sigma_data is not None else empirical_sigma_data(points)


def build_model(config: RunConfig, sigma_data: float, rng: np.random.Generator,
                points: Optional[np.ndarray] = None) -> DiscoModel:
    """
    Fresh denoiser and encoder for the run

    With training `points` and embedding_init=kmeans the disco arm's
    embedding tables start on k-means centroids of the data.
    """
    denoiser = ToyDenoiser(
        config.num_latents,
        config.codebook_size,
        rng,
        sigma_component=config.sigma_component,
        hidden_width=config.hidden_width,
        depth=config.denoiser_depth,
        time_embedding_dim=config.time_embedding_dim,
    )
    encoder = Encoder(config.num_latents, config.codebook_size, rng, hidden_width=config.encoder_width,
                      depth=config.encoder_depth, input_scale=1.0 / sigma_data)
    if points is not None and config.arm == Arm.DISCO and config.embedding_init == EmbeddingInit.KMEANS:
        denoiser.init_embeddings_from_data(points, stream_rng(config.seed, "embedding"))
    return DiscoModel(denoiser, encoder)


def new_prior(config: RunConfig, rng: np.random.Generator) -> LatentPrior:
    return build_prior(config.num_latents, config.codebook_size, rng, hidden_width=config.prior_width,
                       depth=config.prior_depth, lr=config.learning_rate, batch_size=config.prior_batch_size)


def load_model(config: RunConfig, out: Path, arm: Union[Arm, str]) -> Tuple[DiscoModel, Checkpoint]:
    """Rebuild a trained arm from out/<arm>/model.ckpt.json"""
    path = arm_dir(out, arm) / MODEL_FILE
    checkpoint = load_checkpoint(path, CheckpointKind.MODEL)
    check_config_hash(checkpoint, config.with_overrides(arm=Arm(arm).value), path)
    sigma_data = float(checkpoint.metadata["sigma_data"])
    model = build_model(config, sigma_data, stream_rng(config.seed, "init"))
    restore_parameters(model, checkpoint)
    return model, checkpoint


def load_prior(config: RunConfig, out: Path) -> LatentPrior:
    path = arm_dir(out, Arm.DISCO) / PRIOR_FILE
    checkpoint = load_checkpoint(path, CheckpointKind.PRIOR)
    check_config_hash(checkpoint, config.with_overrides(arm=Arm.DISCO.value), path)
    prior = new_prior(config, stream_rng(config.seed, "prior"))
    restore_parameters(prior, checkpoint)
    return prior


def maybe_prior(config: RunConfig, out: Path, arm: Union[Arm, str]) -> Optional[LatentPrior]:
    """The fitted prior for the disco arm, None for the baseline"""
    if Arm(arm) == Arm.BASELINE:
        return None
    return load_prior(config, out)
