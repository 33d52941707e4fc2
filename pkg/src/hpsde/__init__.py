"""Hierarchical policy search via return-weighted density estimation.

Episodic policy search where option structure is discovered by weighted
variational mixture estimation, option policies are updated with eRWR or
episodic REPS, and a GP return model gates option selection per context.
"""

from .config import HpsdeConfig, default_config, load_config
from .core import (
    Dataset,
    FeatureMap,
    InvalidInputError,
    NumericalError,
    RngStream,
    Sample,
    dataset_append,
)
from .harness import LearningTrace, RunResult, run_baseline_monolithic, run_hpsde, write_outputs

__version__ = "0.1.0"

__all__ = [
    "HpsdeConfig", "default_config", "load_config",
    "Sample", "Dataset", "dataset_append", "FeatureMap", "RngStream",
    "InvalidInputError", "NumericalError",
    "LearningTrace", "RunResult", "run_hpsde", "run_baseline_monolithic", "write_outputs",
    "__version__",
]
