"""
DeepSeekMoE Layer
Shared plus gated routed expert FFNs with sparse token dispatch
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from moe.balance import expert_balance_loss
from moe.moe_config import MoeLayerConfig
from moe.router import RouterState, route_tokens
from tensor_core.errors import DimensionError
from tensor_core.streams import normal_param, zeros_param
from tensor_core.tensor import Tensor, put_rows, relu, silu, take_rows

ACTIVATIONS = {"silu": silu, "relu": relu}


@dataclass
class FeedForward:
    """Two-layer FFN: W_out act(W_in x)"""

    w_in: Tensor
    w_out: Tensor
    activation: str = "silu"

    @classmethod
    def init(cls, d: int, inner: int, seed: int, prefix: str, activation: str = "silu",
             std: float = 0.02, zero_output: bool = False) -> "FeedForward":
        w_in = normal_param(seed, f"{prefix}.w_in", (inner, d), std)
        if zero_output:
            w_out = zeros_param(f"{prefix}.w_out", (d, inner))
        else:
            w_out = normal_param(seed, f"{prefix}.w_out", (d, inner), std)
        return cls(w_in=w_in, w_out=w_out, activation=activation)

    def __call__(self, x: Tensor) -> Tensor:
        return ACTIVATIONS[self.activation](x @ self.w_in.T) @ self.w_out.T

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return {f"{prefix}w_in": self.w_in, f"{prefix}w_out": self.w_out}

    @property
    def parameter_count(self) -> int:
        return self.w_in.size + self.w_out.size


@dataclass
class MoeExperts:
    shared: List[FeedForward]
    routed: List[FeedForward]

    @classmethod
    def init(cls, cfg: MoeLayerConfig, seed: int, prefix: str = "moe",
             std: float = 0.02, zero_output: bool = False) -> "MoeExperts":
        def make(kind: str, i: int) -> FeedForward:
            return FeedForward.init(cfg.d, cfg.expert_inner, seed, f"{prefix}.{kind}{i}",
                                    cfg.activation, std, zero_output)

        return cls(shared=[make("shared", i) for i in range(cfg.n_shared)],
                   routed=[make("routed", i) for i in range(cfg.n_routed)])

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = {}
        for kind, experts in (("shared", self.shared), ("routed", self.routed)):
            for i, expert in enumerate(experts):
                params.update(expert.parameters(f"{prefix}{kind}{i}."))
        return params

    def validate(self, cfg: MoeLayerConfig) -> None:
        if len(self.shared) != cfg.n_shared or len(self.routed) != cfg.n_routed:
            raise DimensionError(
                f"expected {cfg.n_shared} shared and {cfg.n_routed} routed experts, "
                f"got {len(self.shared)} and {len(self.routed)}")
        for expert in self.shared + self.routed:
            if expert.w_in.shape != (cfg.expert_inner, cfg.d) or expert.w_out.shape != (cfg.d, cfg.expert_inner):
                raise DimensionError(
                    f"expert weights {expert.w_in.shape}/{expert.w_out.shape} do not match "
                    f"d={cfg.d}, inner={cfg.expert_inner}")


def moe_forward(u: Tensor, experts: MoeExperts, state: RouterState, cfg: MoeLayerConfig,
                residual: Optional[Tensor] = None, record: bool = True) -> Tuple[Tensor, Tensor]:
    """h_t = sum shared FFN_i(u_t) + sum g_{i,t} FFN_i(u_t) + residual_t.

    residual defaults to u itself. Returns (h, balance loss); the loss is a
    zero scalar unless routing_mode is aux_loss. With record set, the layer's
    selections and affinities are added to the router's open window.
    """
    if u.ndim != 2 or u.shape[1] != cfg.d:
        raise DimensionError(f"MoE input: expected shape (T, {cfg.d}), got {u.shape}")
    experts.validate(cfg)
    T = u.shape[0]
    residual = u if residual is None else residual
    if T == 0:
        return residual, Tensor(0.0)

    routing = route_tokens(u, state, cfg)
    out = None
    for expert in experts.shared:
        y = expert(u)
        out = y if out is None else out + y

    for i, expert in enumerate(experts.routed):
        rows = np.flatnonzero(routing.mask[:, i])
        if rows.size == 0:
            continue
        gate = take_rows(routing.scores[:, i:i + 1], rows)
        contribution = put_rows(expert(take_rows(u, rows)) * gate, rows, T)
        out = contribution if out is None else out + contribution

    h = residual if out is None else out + residual

    if record:
        state.record(routing.mask, routing.scores.data)
    if cfg.routing_mode == "aux_loss" and cfg.alpha > 0:
        aux = expert_balance_loss(routing.mask, routing.scores, cfg.alpha, cfg.k_routed)
    else:
        aux = Tensor(0.0)
    return h, aux


def expert_parameter_counts(cfg: MoeLayerConfig) -> Tuple[int, int]:
    """(total expert parameters, expert parameters activated per token)"""
    per_expert = 2 * cfg.d * cfg.expert_inner
    return cfg.n_total * per_expert, (cfg.n_shared + cfg.k_routed) * per_expert
