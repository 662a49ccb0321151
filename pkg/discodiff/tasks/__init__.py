"""
Command tasks for the experiment pipeline
"""

from .analysis import cmd_analyze
from .compare import cmd_compare
from .gen_data import cmd_gen_data
from .prior import cmd_train_prior
from .sampling import cmd_sample
from .training import cmd_train

__all__ = ["cmd_analyze", "cmd_compare", "cmd_gen_data", "cmd_sample", "cmd_train", "cmd_train_prior"]
