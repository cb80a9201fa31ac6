"""
Toy Language Model
Embedding, l blocks of (MHA|MLA) + (dense|MoE), shared output head, optional MTP depths
"""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from layers.block import BlockConfig, TransformerBlock, new_cache
from layers.head import Embedding, OutputHead
from moe.router import RouterState, bias_update
from mtp.mtp_config import MtpConfig
from mtp.mtp_module import MtpModule, build_mtp_modules, mtp_depth_losses, mtp_forward
from tensor_core.errors import DimensionError
from tensor_core.tensor import Tensor, cross_entropy, grad_enabled, log_softmax_rows, no_grad


class ModelConfig(BlockConfig):
    """Block shape plus head tying; the layer count is attention.l"""

    tie_embeddings: bool = False

    @property
    def n_layers(self) -> int:
        return self.attention.l


@dataclass
class LossBreakdown:
    total: Tensor
    main: float
    balance: float
    mtp: float = 0.0
    mtp_depths: List[float] = field(default_factory=list)

    def as_row(self) -> Dict[str, float]:
        row = {"loss": self.total.item(), "loss_main": self.main, "loss_balance": self.balance,
               "loss_mtp": self.mtp}
        for k, value in enumerate(self.mtp_depths, start=1):
            row[f"loss_mtp_{k}"] = value
        return row


def _block_parameter_count(cfg: BlockConfig) -> int:
    a, d = cfg.attention, cfg.d
    count = 2 * d
    if cfg.attention_variant == "mha":
        count += 4 * a.width * d
    else:
        count += a.d_c * d + 2 * a.width * a.d_c + a.d_c_q * d + a.width * a.d_c_q + d * a.width
        if a.d_h_r:
            count += a.n_h * a.d_h_r * a.d_c_q + a.d_h_r * d
    if cfg.ffn == "moe":
        m = cfg.moe
        count += m.n_total * 2 * d * m.expert_inner + m.n_routed * d
    else:
        count += 2 * d * cfg.dense_inner
    return count


def analytic_parameter_count(cfg: ModelConfig, vocab_size: int, mtp_cfg: Optional[MtpConfig] = None) -> int:
    d = cfg.d
    count = vocab_size * d + d + (0 if cfg.tie_embeddings else vocab_size * d)
    count += cfg.n_layers * _block_parameter_count(cfg)
    if mtp_cfg is not None:
        count += mtp_cfg.depth * (2 * d + 2 * d * d + _block_parameter_count(cfg))
    return count


class ToyModel:
    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0,
                 mtp_cfg: Optional[MtpConfig] = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.seed = seed
        self.mtp_cfg = mtp_cfg or MtpConfig(depth=0)
        self.embedding = Embedding.init(vocab_size, cfg.d, seed, cfg.init_std)
        self.head = OutputHead.init(vocab_size, cfg.d, seed, cfg.init_std,
                                    embedding=self.embedding if cfg.tie_embeddings else None)
        self.blocks = [TransformerBlock.init(cfg, seed, f"block{i}") for i in range(cfg.n_layers)]
        self.mtp_modules: List[MtpModule] = build_mtp_modules(self.mtp_cfg, cfg, self.embedding, self.head, seed)
        logger.debug(f"ToyModel: V={vocab_size}, {cfg.n_layers} x ({cfg.attention_variant}, {cfg.ffn}), "
                     f"{self.parameter_count()} parameters")

    # -- parameters -------------------------------------------------------
    def parameters(self, include_mtp: bool = True) -> Dict[str, Tensor]:
        params = {}
        params.update(self.embedding.parameters("embedding."))
        params.update(self.head.parameters("head."))
        for i, block in enumerate(self.blocks):
            params.update(block.parameters(f"block{i}."))
        if include_mtp:
            for module in self.mtp_modules:
                params.update(module.parameters(f"mtp{module.depth}."))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def routers(self) -> Dict[str, RouterState]:
        routers = {f"block{i}": block.router for i, block in enumerate(self.blocks) if block.router is not None}
        for module in self.mtp_modules:
            if module.block.router is not None:
                routers[f"mtp{module.depth}"] = module.block.router
        return routers

    def snapshot(self) -> "ToyModel":
        """Independent deep copy; tied tensors stay tied inside the copy"""
        return copy.deepcopy(self)

    # -- forward ------------------------------------------------------------
    def hidden(self, tokens, record: Optional[bool] = None) -> tuple:
        """Final hidden states [B*T, d] of a [B, T] token block and the summed balance loss.

        Routers record loads whenever gradients are on, unless record says otherwise.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.ndim != 2 or tokens.shape[1] == 0:
            raise DimensionError(f"expected a [B, T] token block, got shape {tokens.shape}")
        seq_len = tokens.shape[1]
        h = self.embedding(tokens)
        balance = None
        record = grad_enabled() if record is None else record
        for block in self.blocks:
            h, aux = block.forward(h, seq_len, self.cfg, record=record)
            balance = aux if balance is None else balance + aux
        return h, balance

    def forward(self, tokens, record: Optional[bool] = None) -> Tensor:
        """[B*T, V] next-token logits"""
        h, _ = self.hidden(tokens, record)
        return self.head(h)

    def loss(self, batch, use_mtp: bool = True) -> LossBreakdown:
        """Main cross-entropy + balance losses + L_MTP for a [B, T+1] batch.

        The MTP blocks' own balance losses ride inside L_MTP, so they are
        weighted by lambda/D like the depth cross-entropies. At lambda = 0 the
        depths are evaluated without a graph and only their losses are reported.
        """
        batch = np.asarray(batch, dtype=np.int64)
        inputs, targets = batch[:, :-1], batch[:, 1:].reshape(-1)
        h, balance = self.hidden(inputs)
        main = cross_entropy(self.head(h), targets)
        total = main + balance

        breakdown = LossBreakdown(total=total, main=main.item(), balance=balance.item())
        if use_mtp and self.mtp_cfg.depth > 0:
            weight = self.mtp_cfg.lam / self.mtp_cfg.depth
            if weight == 0.0:
                # reported only: the graph and router windows match depth 0
                with no_grad():
                    logits = mtp_forward(h, batch, self.mtp_modules, self.mtp_cfg, self.cfg, record=False)
                    depth_losses = mtp_depth_losses(logits, batch)
                breakdown.mtp_depths = [loss.item() for loss in depth_losses]
                return breakdown
            aux_losses: List[Tensor] = []
            logits = mtp_forward(h, batch, self.mtp_modules, self.mtp_cfg, self.cfg,
                                 record=grad_enabled(), aux_losses=aux_losses)
            depth_losses = mtp_depth_losses(logits, batch)
            mtp_total = depth_losses[0]
            for extra in depth_losses[1:] + aux_losses:
                mtp_total = mtp_total + extra
            breakdown.total = total + mtp_total * weight
            breakdown.mtp = weight * sum(loss.item() for loss in depth_losses)
            breakdown.mtp_depths = [loss.item() for loss in depth_losses]
        return breakdown

    def after_step(self) -> Dict[str, float]:
        """Close every router window: loss-free routers take their bias step first"""
        ratios = {}
        for name, router in self.routers().items():
            loads = router.load_counts.copy()
            if router.routing_mode == "loss_free" and router.tokens:
                bias_update(router, loads, self.cfg.moe.gamma)
            if loads.sum():
                ratios[name] = float(loads.max() / loads.mean())
            router.reset_window()
        return ratios

    # -- decoding -----------------------------------------------------------
    def _step_logits(self, h_t: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.head(Tensor(h_t.reshape(1, -1))).data.reshape(-1)

    def decode(self, prompt_ids: Sequence[int], max_new_tokens: int, rng: Optional[np.random.Generator] = None,
               temperature: float = 1.0, stop_id: Optional[int] = None, counters=None) -> List[int]:
        """Incremental generation through the KV caches; temperature 0 is greedy.

        The stop token, when produced, is included in the returned ids.
        """
        if not prompt_ids:
            raise DimensionError("decoding needs at least one prompt token")
        cache = new_cache(self.cfg, len(self.blocks))
        weights = self.embedding.weight.data

        def advance(token_id: int) -> np.ndarray:
            h = weights[token_id].copy()
            for layer, block in enumerate(self.blocks):
                h = block.decode_step(h, self.cfg, cache, layer, counters)
            return self._step_logits(h)

        logits = None
        for token_id in prompt_ids:
            logits = advance(int(token_id))

        generated = []
        for _ in range(max_new_tokens):
            if temperature <= 0 or rng is None:
                token = int(np.argmax(logits))
            else:
                z = logits / temperature
                p = np.exp(z - z.max())
                token = int(rng.choice(len(p), p=p / p.sum()))
            generated.append(token)
            if stop_id is not None and token == stop_id:
                break
            logits = advance(token)
        return generated

    def completion_log_distributions(self, prompt_ids: Sequence[int], completions: Sequence[Sequence[int]],
                                     pad_id: int = 0) -> List[Tensor]:
        """Per completion, the [len(completion), V] log-softmax rows that score its tokens.

        All completions of one prompt run as a single right-padded batch; causal
        attention keeps the padding out of every scored row. Routers do not record.
        """
        if not prompt_ids:
            raise DimensionError("scoring needs at least one prompt token")
        prefix = list(prompt_ids)
        rows = [prefix + list(c[:-1]) for c in completions]
        width = max(len(r) for r in rows)
        batch = np.full((len(rows), width), pad_id, dtype=np.int64)
        for i, r in enumerate(rows):
            batch[i, :len(r)] = r
        log_probs = log_softmax_rows(self.forward(batch, record=False))
        start = len(prefix) - 1
        return [log_probs[i * width + start:i * width + start + len(c)] for i, c in enumerate(completions)]
