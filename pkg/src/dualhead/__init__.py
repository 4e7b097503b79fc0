"""Dual-head spatio-temporal graph network for skeleton action recognition."""
from .kernels import BACKEND
from .model import DualHeadNet, ModelConfig, count_parameters, ensemble
from .tensor import Parameter, Tensor, backward, no_grad

__version__ = "0.1.0"
