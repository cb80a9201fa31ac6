"""
MoE Configuration
Expert counts for fine-grained segmentation with shared expert isolation
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tensor_core.errors import ConfigError


class MoeLayerConfig(BaseModel):
    """DeepSeekMoE layer shape.

    n_experts (N) and top_k (K) describe the conventional layer before
    segmentation; every expert is split into `segments` (m) smaller ones, and
    n_shared (K_s) of the m*N resulting experts are always active.
    ffn_inner is the conventional expert inner dim, so each segmented expert
    has ffn_inner / m hidden units.
    """

    model_config = ConfigDict(extra='forbid', frozen=True)

    d: int = Field(default=64, gt=0, description="Hidden dimension")
    n_experts: int = Field(default=4, gt=0, description="Conventional expert count N")
    segments: int = Field(default=2, gt=0, description="Segmentation factor m")
    top_k: int = Field(default=1, gt=0, description="Conventional activated count K")
    n_shared: int = Field(default=1, ge=0, description="Shared expert count K_s")
    ffn_inner: int = Field(default=128, gt=0, description="Conventional expert inner dim")
    alpha: float = Field(default=0.01, ge=0, description="Expert-level balance loss weight")
    gamma: float = Field(default=0.001, description="Bias update step for loss-free routing")
    routing_mode: Literal["aux_loss", "loss_free"] = "aux_loss"
    activation: Literal["silu", "relu"] = "silu"

    @model_validator(mode='after')
    def _check_counts(self):
        check_counts(self)
        return self

    @property
    def n_total(self) -> int:
        return self.segments * self.n_experts

    @property
    def n_routed(self) -> int:
        return self.n_total - self.n_shared

    @property
    def k_routed(self) -> int:
        return self.segments * self.top_k - self.n_shared

    @property
    def expert_inner(self) -> int:
        return self.ffn_inner // self.segments


def check_counts(cfg: MoeLayerConfig) -> None:
    if cfg.ffn_inner % cfg.segments:
        raise ConfigError(f"segments={cfg.segments} does not divide ffn_inner={cfg.ffn_inner}")
    if cfg.k_routed < 1:
        raise ConfigError(f"routed experts per token m*K-K_s={cfg.k_routed} must be at least 1")
    if cfg.k_routed > cfg.n_routed:
        raise ConfigError(
            f"routed experts per token {cfg.k_routed} exceeds routed expert count {cfg.n_routed}")
    if cfg.gamma < 0:
        raise ConfigError(f"bias step gamma={cfg.gamma} must be nonnegative")
