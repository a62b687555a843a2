"""Stream-based federated active learning simulator with learned decentralized query policies."""
from ._kernels import BACKEND
from .config import ExperimentConfig
from .errors import LeadqError
from .harness import resume, run_experiment, run_sweep

__version__ = "0.1.0"

__all__ = ["BACKEND", "ExperimentConfig", "LeadqError", "run_experiment", "run_sweep", "resume", "__version__"]
