"""
Sampling task: prior latents, Heun ODE solve, CSV and scatter plot
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from ..config import RunConfig
from ..services.plotting import plot_samples
from ..services.sampler import edm_time_grid, generate, write_samples_csv
from .common import STREAMS, arm_dir, diffusion_config, load_model, maybe_prior, prepare_output

logger = logging.getLogger(__name__)

SAMPLES_FILE = "samples.csv"
SCATTER_FILE = "samples.svg"


def cmd_sample(config: RunConfig, out: Union[str, Path], n: Optional[int] = None,
               trajectories: int = 0) -> Dict[str, Any]:
    """
    Generate samples from a trained arm

    Args:
        config: Run configuration (arm, cfg_scale, n_steps, seed)
        out: Output directory with the trained checkpoints
        n: Number of samples (default config.n_samples)
        trajectories: ODE paths to overlay as dotted lines

    Returns:
        Dict with the CSV and SVG paths, sample count and NFE per sample
    """
    out = prepare_output(config, out)
    n = config.n_samples if n is None else n
    model, checkpoint = load_model(config, out, config.arm)
    prior = maybe_prior(config, out, config.arm)
    grid = edm_time_grid(diffusion_config(config, float(checkpoint.metadata["sigma_data"])), config.n_steps)

    generated = generate(model.denoiser, prior, grid, n, config.seed, w_cfg=config.cfg_scale,
                         temperature=config.prior_temperature, record=trajectories > 0,
                         stream=STREAMS["sample"], systematic=config.systematic_latents)
    target = arm_dir(out, config.arm)
    csv_path = write_samples_csv(generated, target / SAMPLES_FILE)
    overlay = None
    if generated.trajectory is not None:
        overlay = generated.trajectory.states[:, :trajectories, :]
    svg_path = plot_samples(target / SCATTER_FILE, generated.samples, generated.latents, trajectories=overlay,
                            title=f"{config.arm.value} samples (w={config.cfg_scale:g})",
                            description=config.to_env_text())
    return {"samples": str(csv_path), "figure": str(svg_path), "n": n, "nfe": generated.nfe}
