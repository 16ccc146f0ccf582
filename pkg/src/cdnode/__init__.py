"""Constrained dynamical neural ODE regression of per-frame Beta moments."""

from .beta import BetaModeConc, BetaMoments, BetaShape, bell_sigma_bound
from .constraints import ConstraintConfig
from .labels import MomentSequence, RaterMatrix, fit_sequence
from .net import GoverningNetwork, init_network
from .ode import SolveConfig, solve_cdnode
from .training import TrainConfig, ccc, predict, train

__version__ = "0.1.0"
