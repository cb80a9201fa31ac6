"""
Multi-Token Prediction Module
Causal chain of per-depth blocks on top of the main model's final hidden states
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from layers.block import BlockConfig, TransformerBlock
from layers.head import Embedding, OutputHead
from layers.norm import RMSNorm
from mtp.mtp_config import MtpConfig
from tensor_core.errors import ConfigError, ContractError, DimensionError, NumericError
from tensor_core.streams import normal_param
from tensor_core.tensor import Tensor, concat, cross_entropy, take_rows


@dataclass
class MtpModule:
    """Depth-k module. embedding and head are the main model's objects, not copies."""

    depth: int
    hidden_norm: RMSNorm
    embed_norm: RMSNorm
    projection: Tensor
    block: TransformerBlock
    embedding: Embedding
    head: OutputHead

    @classmethod
    def init(cls, depth: int, block_cfg: BlockConfig, embedding: Embedding, head: OutputHead,
             seed: int) -> "MtpModule":
        d = block_cfg.d
        prefix = f"mtp{depth}"
        return cls(
            depth=depth,
            hidden_norm=RMSNorm.init(d, f"{prefix}.hidden_norm"),
            embed_norm=RMSNorm.init(d, f"{prefix}.embed_norm"),
            projection=normal_param(seed, f"{prefix}.projection", (d, 2 * d), block_cfg.init_std),
            block=TransformerBlock.init(block_cfg, seed, f"{prefix}.block"),
            embedding=embedding,
            head=head,
        )

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        """Own parameters only; the shared embedding and head belong to the main model"""
        params = {f"{prefix}projection": self.projection}
        params.update(self.hidden_norm.parameters(f"{prefix}hidden_norm."))
        params.update(self.embed_norm.parameters(f"{prefix}embed_norm."))
        params.update(self.block.parameters(f"{prefix}block."))
        return params


def build_mtp_modules(cfg: MtpConfig, block_cfg: BlockConfig, embedding: Embedding,
                      head: OutputHead, seed: int) -> List[MtpModule]:
    vocab_size, d = embedding.weight.shape
    if cfg.d is not None and cfg.d != d:
        raise ConfigError(f"mtp.d={cfg.d} differs from the model width {d}")
    if cfg.vocab_size is not None and cfg.vocab_size != vocab_size:
        raise ConfigError(f"mtp.vocab_size={cfg.vocab_size} differs from the vocabulary size {vocab_size}")
    return [MtpModule.init(k, block_cfg, embedding, head, seed) for k in range(1, cfg.depth + 1)]


def _token_block(tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    return tokens[None, :] if tokens.ndim == 1 else tokens


def mtp_forward(main_hidden: Tensor, tokens, modules: Sequence[MtpModule], cfg: MtpConfig,
                block_cfg: BlockConfig, record: bool = True,
                aux_losses: Optional[List[Tensor]] = None) -> List[Tensor]:
    """Per-depth logits.

    main_hidden stacks B sequences of T positions ([B*T, d]); tokens is [B, T+1]
    (or a single row) holding the model inputs followed by the last target.
    Depth k covers source positions p = 0..T-k-1: it combines the depth-(k-1)
    representation at p with the embedding of token p+k and predicts token p+k+1.
    Balance losses of the depth blocks are appended to aux_losses when given.
    """
    if cfg.depth == 0:
        return []
    if len(modules) != cfg.depth:
        raise ContractError(f"expected {cfg.depth} MTP modules, got {len(modules)}")
    tokens = _token_block(tokens)
    n_seq, T = tokens.shape[0], tokens.shape[1] - 1
    if main_hidden.shape != (n_seq * T, block_cfg.d):
        raise DimensionError(f"main hidden {main_hidden.shape} does not match {n_seq} sequences of {T}")
    if T <= cfg.depth:
        raise ContractError(f"sequence of {T} positions is too short for MTP depth {cfg.depth}")

    logits = []
    previous, prev_len = main_hidden, T
    for k, module in enumerate(modules, start=1):
        length = T - k
        rows = (np.arange(n_seq)[:, None] * prev_len + np.arange(length)[None, :]).reshape(-1)
        hidden = module.hidden_norm(take_rows(previous, rows))
        embedded = module.embed_norm(module.embedding(tokens[:, k:k + length]))
        merged = concat([hidden, embedded], axis=1) @ module.projection.T
        current, aux = module.block.forward(merged, length, block_cfg, record=record)
        if aux_losses is not None:
            aux_losses.append(aux)
        logits.append(module.head(current))
        previous, prev_len = current, length
    return logits


def mtp_depth_losses(logits: Sequence[Tensor], tokens) -> List[Tensor]:
    """L^k = -(1/T) sum of log-probabilities of the T-k depth-k targets, averaged over sequences"""
    tokens = _token_block(tokens)
    n_seq, T = tokens.shape[0], tokens.shape[1] - 1
    losses = []
    for k, depth_logits in enumerate(logits, start=1):
        if not np.isfinite(depth_logits.data).all():
            raise NumericError(f"non-finite logits at MTP depth {k}")
        targets = tokens[:, k + 1:T + 1].reshape(-1)
        if depth_logits.shape[0] != targets.size:
            raise DimensionError(
                f"depth {k}: {depth_logits.shape[0]} logit rows for {targets.size} targets")
        losses.append(cross_entropy(depth_logits, targets, reduction="sum") / (n_seq * T))
    return losses


def mtp_loss(logits: Sequence[Tensor], tokens, cfg: MtpConfig) -> Tensor:
    """L_MTP = (lambda/D) * sum_k L^k"""
    if cfg.lam < 0:
        raise ConfigError(f"MTP weight lambda={cfg.lam} must be nonnegative")
    if cfg.depth == 0 or not logits:
        return Tensor(0.0)
    losses = mtp_depth_losses(logits, tokens)
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    logger.debug(f"MTP depth losses: {[round(loss.item(), 6) for loss in losses]}")
    return total * (cfg.lam / cfg.depth)
