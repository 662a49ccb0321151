"""
Two-arm comparison over several seeds
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from ..config import Arm, RunConfig
from ..schemas import CompareReport, SeedResult
from .analysis import cmd_analyze
from .common import prepare_output, progress_bar
from .gen_data import cmd_gen_data
from .prior import cmd_train_prior
from .training import cmd_train

logger = logging.getLogger(__name__)

COMPARE_FILE = "compare.json"
DEFAULT_SEEDS = (0, 1, 2)


def run_pipeline(config: RunConfig, out: Path) -> Dict[str, Any]:
    """gen-data, both training arms, the prior and the analysis for one seed"""
    cmd_gen_data(config, out)
    cmd_train(config.with_overrides(arm=Arm.DISCO.value), out)
    cmd_train(config.with_overrides(arm=Arm.BASELINE.value), out)
    cmd_train_prior(config.with_overrides(arm=Arm.DISCO.value), out)
    return cmd_analyze(config, out)


def cmd_compare(config: RunConfig, out: Union[str, Path], seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """
    Run the full pipeline for each seed under out/seed-<s>/ and report the
    per-arm median W-2

    Returns:
        Dict with the comparison file path, per-seed W-2 and the medians
    """
    out = prepare_output(config, out)
    seeds = list(DEFAULT_SEEDS if seeds is None else seeds)
    if not seeds:
        raise ValueError("compare needs at least one seed")
    results = []
    with progress_bar(len(seeds), "seeds") as bar:
        for seed in seeds:
            seed_config = config.with_overrides(seed=seed)
            summary = run_pipeline(seed_config, out / f"seed-{seed}")
            w2 = summary["w2"]
            results.append(SeedResult(seed=seed, w2_disco=w2[Arm.DISCO.value], w2_baseline=w2[Arm.BASELINE.value]))
            logger.info(f"Seed {seed}: W-2 disco {results[-1].w2_disco:.4f}, baseline {results[-1].w2_baseline:.4f}")
            bar.update(1)

    report = CompareReport(
        seeds=seeds,
        config_hash=config.config_hash(),
        config=config.as_dict(),
        results=results,
        median_w2_disco=float(np.median([r.w2_disco for r in results])),
        median_w2_baseline=float(np.median([r.w2_baseline for r in results])),
    )
    path = out / COMPARE_FILE
    path.write_text(report.model_dump_json(indent=2))
    logger.info(f"Median W-2: disco {report.median_w2_disco:.4f}, baseline {report.median_w2_baseline:.4f}")
    return {
        "compare": str(path),
        "median_w2_disco": report.median_w2_disco,
        "median_w2_baseline": report.median_w2_baseline,
        "per_seed": [r.model_dump() for r in results],
    }
