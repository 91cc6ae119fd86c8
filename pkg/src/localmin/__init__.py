"""Closed-form loss values at differentiable local minima of piecewise-linear networks."""
from ._accel import HAVE_NUMBA, USE_NUMBA
from .linalg import CutoffCriterion, ProjectorBasis, column_space_basis, project, project_null
from .minima import MinimaReport, analyze_point, assemble_D, compute_J, decompose_contributions
from .network import ActivationKind, NetworkArch, NetworkParams, forward, gradient, init_params
from .trainer import TrainConfig, descend_to_stationarity, train_sgd

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA", "USE_NUMBA", "CutoffCriterion", "ProjectorBasis", "column_space_basis", "project",
    "project_null", "MinimaReport", "analyze_point", "assemble_D", "compute_J", "decompose_contributions",
    "ActivationKind", "NetworkArch", "NetworkParams", "forward", "gradient", "init_params",
    "TrainConfig", "descend_to_stationarity", "train_sgd",
]
