"""
Tensor Core Package
Dense tensors, the gradient tape, seeded streams and tensor archives
"""

from .errors import (
    ConfigError, ContractError, DimensionError, DivergenceError, NumericError, RewardError
)
from .tensor import (
    Tape, Tensor, add, as_tensor, backward, clip, concat, cross_entropy, div, exp,
    get_default_dtype, grad_enabled, log, log_softmax_rows, matmul, mean, minimum, mul,
    neg, no_grad, pick, pow_scalar, put_rows, relu, reshape, rms_norm, rotate_pairs,
    set_default_dtype, silu, slice_, softmax_rows, sub, sum_, take_rows, transpose
)
from .streams import normal_param, ones_param, param_stream, zeros_param
from .checkpoint import load_archive, save_archive
from .gradcheck import gradcheck, relative_error
from .optim import Optimizer, OptimizerConfig, grad_norm, zero_grads

__all__ = [
    'ConfigError', 'ContractError', 'DimensionError', 'DivergenceError', 'NumericError',
    'RewardError', 'Tape', 'Tensor', 'add', 'as_tensor', 'backward', 'clip', 'concat',
    'cross_entropy', 'div', 'exp', 'get_default_dtype', 'grad_enabled', 'log',
    'log_softmax_rows', 'matmul', 'mean', 'minimum', 'mul', 'neg', 'no_grad', 'pick',
    'pow_scalar', 'put_rows', 'relu', 'reshape', 'rms_norm', 'rotate_pairs',
    'set_default_dtype', 'silu', 'slice_', 'softmax_rows', 'sub', 'sum_', 'take_rows',
    'transpose', 'normal_param', 'ones_param', 'param_stream', 'zeros_param',
    'load_archive', 'save_archive', 'gradcheck', 'relative_error',
    'Optimizer', 'OptimizerConfig', 'grad_norm', 'zero_grads'
]
