"""
Optimizer Module
Adaptive-moment update with linear warmup; momentum-free unless beta1 is raised
"""

from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tensor_core.tensor import Tensor


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    lr: float = Field(default=3e-3, ge=0, description="Fixed step size after warmup")
    beta1: float = Field(default=0.0, ge=0, lt=1, description="First-moment decay; 0 disables momentum")
    beta2: float = Field(default=0.99, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    warmup_steps: int = Field(default=50, ge=0)


class Optimizer:
    """Per-parameter second-moment scaling; parameters are visited in sorted name order"""

    def __init__(self, cfg: OptimizerConfig = None):
        self.cfg = cfg or OptimizerConfig()
        self.step_count = 0
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}

    def learning_rate(self) -> float:
        if self.cfg.warmup_steps and self.step_count < self.cfg.warmup_steps:
            return self.cfg.lr * (self.step_count + 1) / self.cfg.warmup_steps
        return self.cfg.lr

    def step(self, params: Dict[str, Tensor]) -> float:
        """Apply one update from the accumulated .grad buffers, then clear them"""
        lr = self.learning_rate()
        self.step_count += 1
        beta1, beta2 = self.cfg.beta1, self.cfg.beta2
        for name in sorted(params):
            param = params[name]
            if param.grad is None:
                continue
            grad = param.grad
            second = self.second.get(name, np.zeros_like(param.data))
            second = beta2 * second + (1 - beta2) * grad * grad
            self.second[name] = second
            if beta1 > 0:
                first = beta1 * self.first.get(name, np.zeros_like(param.data)) + (1 - beta1) * grad
                self.first[name] = first
                direction = first / (1 - beta1 ** self.step_count)
            else:
                direction = grad
            scale = np.sqrt(second / (1 - beta2 ** self.step_count)) + self.cfg.eps
            param.data -= lr * direction / scale
            param.grad = None
        return lr

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"opt.second.{name}": value for name, value in self.second.items()}
        arrays.update({f"opt.first.{name}": value for name, value in self.first.items()})
        return arrays

    def load_state(self, arrays: Dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        self.first = {key[len("opt.first."):]: value.copy() for key, value in arrays.items()
                      if key.startswith("opt.first.")}
        self.second = {key[len("opt.second."):]: value.copy() for key, value in arrays.items()
                       if key.startswith("opt.second.")}


def zero_grads(params: Dict[str, Tensor]) -> None:
    for param in params.values():
        param.grad = None


def grad_norm(params: Dict[str, Tensor]) -> Tuple[float, int]:
    """Global L2 norm of the present gradients and how many parameters carried one"""
    total, count = 0.0, 0
    for name in sorted(params):
        grad = params[name].grad
        if grad is not None:
            total += float((grad * grad).sum())
            count += 1
    return float(np.sqrt(total)), count
