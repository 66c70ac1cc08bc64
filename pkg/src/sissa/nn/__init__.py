from . import functional
from .gradcheck import GradCheckReport, grad_check
from .layers import (BatchNorm2d, Conv2d, Linear, LSTMLayer, Module, Parameter,
                     ResidualSelfAttention, RNNLayer)
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .serialize import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .tensor import (Tensor, computation_record, get_default_dtype, no_grad, precision,
                     set_default_dtype)

__all__ = [
    "Adam", "AdamState", "BatchNorm2d", "Conv2d", "GradCheckReport", "Linear", "LSTMLayer",
    "Module", "Parameter", "ResidualSelfAttention", "RNNLayer", "Tensor", "adam_step",
    "clip_grad_norm", "computation_record", "dumps_checkpoint", "functional",
    "get_default_dtype", "grad_check", "load_checkpoint", "loads_checkpoint", "no_grad",
    "precision", "save_checkpoint", "set_default_dtype",
]
