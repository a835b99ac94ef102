"""Small numpy autodiff substrate: tensors, layers, Adam, checkpoints."""

from . import tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, check_gradients
from .layers import (
    ConvArch,
    MLPArch,
    TrainTrace,
    arch_from_dict,
    conv_net_forward,
    init_convnet,
    init_mlp,
    mlp_forward,
)
from .optim import ParamStore, adam_step
from .tensor import NonFiniteError, Tensor, positional_encoding

__all__ = [
    "CheckpointError",
    "ConvArch",
    "GradCheckResult",
    "MLPArch",
    "NonFiniteError",
    "ParamStore",
    "Tensor",
    "TrainTrace",
    "adam_step",
    "arch_from_dict",
    "check_gradients",
    "conv_net_forward",
    "init_convnet",
    "init_mlp",
    "load_checkpoint",
    "mlp_forward",
    "positional_encoding",
    "save_checkpoint",
    "tensor",
]
