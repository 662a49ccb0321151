"""
Analysis task: W-2, curvature, Jacobian and loss-vs-t for each trained arm
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..config import Arm, RunConfig
from ..schemas import ArmReport, MetricReport, ProfilePoint
from ..services.analysis import (
    ArmMetrics,
    BinnedProfile,
    CurvatureProfile,
    JacobianProfile,
    compare_arms,
    curvature_profile,
    jacobian_profile,
    log_bin_edges,
    loss_vs_t,
    metrics_rows,
    wasserstein2,
)
from ..services.datagen import Dataset, default_mixture, sample_dataset
from ..services.disco import DiscoModel, extract_latents, mode_purity
from ..services.latent_prior import CategoricalPrior, LatentPrior, latent_histogram, total_variation
from ..services.plotting import plot_profiles
from ..services.sampler import TimeGrid, edm_time_grid, generate, model_denoise_fn
from .common import (
    MODEL_FILE,
    STREAMS,
    arm_dir,
    diffusion_config,
    load_dataset,
    load_model,
    maybe_prior,
    prepare_output,
    stream_rng,
    stream_seed,
)

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
METRICS_FILE = "metrics.csv"


def _empty_profiles(edges: np.ndarray) -> JacobianProfile:
    n_bins = len(edges) - 1
    return JacobianProfile(
        denoiser=BinnedProfile(edges=edges, values=[None] * n_bins, counts=[0] * n_bins),
        score_head=BinnedProfile(edges=edges, values=[None] * n_bins, counts=[0] * n_bins),
    )


def reference_samples(config: RunConfig, n: int) -> np.ndarray:
    """Fresh ground-truth draw with at least `n` points, independent of the training data"""
    spec = default_mixture(config.sigma_component)
    per_component = max(1, -(-n // spec.n_components))
    return sample_dataset(spec, per_component, stream_seed(config.seed, "reference")).points


def analyze_arm(config: RunConfig, arm: Arm, model: DiscoModel, prior: Optional[LatentPrior], dataset: Dataset,
                grid: TimeGrid, sigma_data: float) -> ArmMetrics:
    """Full metric suite of one trained arm"""
    denoiser = model.denoiser
    diffusion = diffusion_config(config, sigma_data)
    rng = stream_rng(config.seed, "analysis")

    generated = generate(denoiser, prior, grid, config.n_samples, config.seed, w_cfg=config.cfg_scale,
                         temperature=config.prior_temperature, stream=STREAMS["sample"],
                         systematic=config.systematic_latents)
    reference = reference_samples(config, config.n_samples)
    w2 = wasserstein2(generated.samples, reference, rng) if config.n_samples else float("nan")

    paths = generate(denoiser, prior, grid, config.n_trajectories, config.seed, w_cfg=config.cfg_scale,
                     temperature=config.prior_temperature, record=True, stream=STREAMS["trajectories"],
                     systematic=config.systematic_latents)
    edges = log_bin_edges(config.sigma_min, config.sigma_max, config.loss_bins)
    if paths.trajectory is None:
        curvature = CurvatureProfile(times=np.zeros(0), mean_curvature=np.zeros(0), counts=np.zeros(0, dtype=int))
        jacobian = _empty_profiles(edges)
    else:
        latents = None if prior is None else paths.latents
        fn = model_denoise_fn(denoiser, latents, config.cfg_scale)
        curvature = curvature_profile(fn, grid, paths.trajectory.states[0], dt=config.curvature_dt,
                                      trajectory=paths.trajectory)
        jacobian = jacobian_profile(denoiser, paths.trajectory, edges, config.jacobian_probes, rng)

    extra: Dict[str, float] = {}
    train_latents = None
    if arm == Arm.DISCO:
        train_latents = extract_latents(model.encoder, dataset.points, config.tau_extract, rng)
        extra["mode_purity"] = mode_purity(train_latents[:, 0], dataset.labels)
        if isinstance(prior, CategoricalPrior):
            extra["prior_tv"] = total_variation(prior.probabilities,
                                                latent_histogram(train_latents[:, 0], config.codebook_size))
    loss = loss_vs_t(denoiser, diffusion, dataset.points, train_latents, edges, config.loss_probes_per_bin, rng)
    logger.info(f"{arm.value}: W-2 {w2:.4f}, mean curvature {curvature.integrated:.4g}")
    return ArmMetrics(arm=arm.value, w2=w2, n_samples=config.n_samples, curvature=curvature, jacobian=jacobian,
                      loss=loss, extra=extra)


def _points(times, values, counts) -> List[ProfilePoint]:
    return [ProfilePoint(t=float(t), value=float(v), n=int(n))
            for t, v, n in zip(times, values, counts) if v is not None and np.isfinite(v) and n > 0]


def arm_report(metrics: ArmMetrics, jacobian_target: str) -> ArmReport:
    selected = metrics.jacobian.selected(jacobian_target)
    curv = metrics.curvature.integrated
    jac = selected.integrated
    return ArmReport(
        arm=metrics.arm,
        w2=metrics.w2 if np.isfinite(metrics.w2) else None,
        n_samples=metrics.n_samples,
        mean_curvature=curv if np.isfinite(curv) else None,
        mean_jacobian_sq=jac if np.isfinite(jac) else None,
        curvature=_points(metrics.curvature.times, metrics.curvature.mean_curvature, metrics.curvature.counts),
        jacobian_D=_points(metrics.jacobian.denoiser.centers, metrics.jacobian.denoiser.values,
                           metrics.jacobian.denoiser.counts),
        jacobian_G=_points(metrics.jacobian.score_head.centers, metrics.jacobian.score_head.values,
                           metrics.jacobian.score_head.counts),
        loss_vs_t=_points(metrics.loss.centers, metrics.loss.values, metrics.loss.counts),
        mode_purity=metrics.extra.get("mode_purity"),
        prior_tv=metrics.extra.get("prior_tv"),
    )


def write_metrics_csv(rows: List[Dict[str, Any]], path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["metric", "t", "arm", "value", "n"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "value": repr(float(row["value"])),
                             "t": row["t"] if row["t"] == "NA" else repr(float(row["t"]))})
    logger.info(f"Wrote metrics: {path}")
    return path


def cmd_analyze(config: RunConfig, out: Union[str, Path]) -> Dict[str, Any]:
    """
    Run the metric suite for every trained arm under `out`

    Returns:
        Dict with the report path and, when both arms are present, the
        comparison summary

    Raises:
        FileNotFoundError: If no arm has a checkpoint, or the disco arm
            lacks its prior
    """
    out = prepare_output(config, out)
    arms = [arm for arm in (Arm.DISCO, Arm.BASELINE) if (arm_dir(out, arm) / MODEL_FILE).is_file()]
    if not arms:
        raise FileNotFoundError(f"No trained model under {out}")
    if len(arms) == 1:
        logger.warning(f"Only the {arms[0].value} arm is trained; skipping the comparison")
    dataset = load_dataset(config, out)

    results: Dict[str, ArmMetrics] = {}
    for arm in arms:
        arm_config = config.with_overrides(arm=arm.value)
        model, checkpoint = load_model(arm_config, out, arm)
        prior = maybe_prior(arm_config, out, arm)
        sigma_data = float(checkpoint.metadata["sigma_data"])
        grid = edm_time_grid(diffusion_config(config, sigma_data), config.n_steps)
        results[arm.value] = analyze_arm(arm_config, arm, model, prior, dataset, grid, sigma_data)

    target = config.jacobian_target.value
    comparison = {}
    if len(results) == 2:
        comparison = compare_arms(results[Arm.DISCO.value], results[Arm.BASELINE.value], jacobian_target=target)

    report = MetricReport(
        seed=config.seed,
        config_hash=config.config_hash(),
        config=config.as_dict(),
        jacobian_target=target,
        arms={name: arm_report(m, target) for name, m in results.items()},
        comparison=comparison,
    )
    report_path = out / REPORT_FILE
    report_path.write_text(report.model_dump_json(indent=2))
    rows = [row for m in results.values() for row in metrics_rows(m)]
    write_metrics_csv(rows, out / METRICS_FILE)

    description = config.to_env_text()
    plot_profiles(out / "curvature.svg",
                  {name: (m.curvature.times, list(m.curvature.mean_curvature)) for name, m in results.items()},
                  ylabel="mean curvature", title="Trajectory curvature", description=description)
    plot_profiles(out / "jacobian.svg",
                  {name: (m.jacobian.selected(target).centers, m.jacobian.selected(target).values)
                   for name, m in results.items()},
                  ylabel=f"mean ||d{target}/dx||_F^2", title="Jacobian norm", description=description)
    plot_profiles(out / "loss_vs_t.svg",
                  {name: (m.loss.centers, m.loss.values) for name, m in results.items()},
                  ylabel="weighted DSM loss", title="Loss vs noise level", description=description)
    logger.info(f"Wrote report: {report_path}")
    return {"report": str(report_path), "arms": list(results), "comparison": comparison,
            "w2": {name: m.w2 for name, m in results.items()}}
