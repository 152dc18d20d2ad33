"""Phase-field regularized variational pruning of graph convolutional networks."""

from .errors import ConfigError, ContractError, DataError, DomainError, NonFiniteError, ShapeError
from .gcn import GcnArchitecture, GcnModel, build_model, forward, param_count
from .phasefield import PhaseFieldParams, alpha_for_tpr, psi, reparametrize, threshold_for, ultra_local
from .regularizers import RegularizerSpec, assemble_regularizer
from .tensor import Tensor, backward, grad_check
from .training import TrainConfig, train

__version__ = "0.1.0"
