"""Dense float tensors with tape-based reverse-mode autodiff."""
from . import functional
from . import functional as F
from .checkpoint import CheckpointError, read_tensor, write_tensor
from .gradcheck import grad_check
from .module import Conv2d, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import (
    TAPE,
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    check_finite,
    default_dtype,
    grad,
    grad_enabled,
    make_result,
    no_grad,
    precision,
    reset_graph,
)

__all__ = [
    "F", "functional", "Tensor", "Parameter", "Module", "Conv2d", "Linear", "LayerNorm",
    "trunc_normal", "as_tensor", "backward", "grad", "grad_check", "no_grad", "precision",
    "default_dtype", "grad_enabled", "make_result", "reset_graph", "check_finite", "TAPE",
    "NonFiniteError", "CheckpointError", "read_tensor", "write_tensor",
]
