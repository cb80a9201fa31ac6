"""
Finite-Difference Gradient Checker
Compares tape gradients against central differences
"""

from typing import Callable, Dict, Optional

import numpy as np
from loguru import logger

import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

from config import settings
from tensor_core.tensor import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denominator)) if analytic.size else 0.0


def gradcheck(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor],
              h: Optional[float] = None, floor: Optional[float] = None) -> Dict[str, float]:
    """Max relative error per parameter between autodiff and central differences.

    loss_fn must rebuild the scalar loss from the current parameter values
    on every call.
    """
    h = settings.gradcheck_step if h is None else h
    floor = settings.gradcheck_floor if floor is None else floor

    for param in params.values():
        param.zero_grad()
    backward(loss_fn())
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    errors = {}
    for name, param in params.items():
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn().item()
            flat[i] = original - h
            minus = loss_fn().item()
            flat[i] = original
            numeric_flat[i] = (plus - minus) / (2 * h)
        errors[name] = relative_error(analytic[name], numeric, floor)
        logger.debug(f"gradcheck {name}: max rel err {errors[name]:.3e}")
    return errors
