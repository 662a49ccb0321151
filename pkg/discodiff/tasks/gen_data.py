"""
Dataset generation task
"""

import logging
from pathlib import Path
from typing import Any, Dict, Union

from ..config import RunConfig
from ..services.datagen import default_mixture, sample_dataset, write_dataset_csv
from .common import DATA_FILE, prepare_output, stream_seed

logger = logging.getLogger(__name__)


def cmd_gen_data(config: RunConfig, out: Union[str, Path]) -> Dict[str, Any]:
    """
    Sample the octagon mixture and write out/data.csv

    Args:
        config: Run configuration (seed, n_per_component, sigma_component)
        out: Output directory

    Returns:
        Dict with the dataset path and row count
    """
    out = prepare_output(config, out)
    dataset = sample_dataset(default_mixture(config.sigma_component), config.n_per_component,
                             stream_seed(config.seed, "data"))
    path = write_dataset_csv(dataset, out / DATA_FILE)
    return {"dataset": str(path), "rows": len(dataset)}
