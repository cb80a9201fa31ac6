"""
Pretraining Loop
Next-token cross-entropy plus MTP and balance losses over random corpus windows
"""

from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger
from tqdm import tqdm

from lm_harness.checkpointing import TrainingState, save_checkpoint
from lm_harness.corpus import Corpus
from lm_harness.metrics import MetricsWriter
from tensor_core.errors import ContractError, DivergenceError, NumericError
from tensor_core.optim import grad_norm
from tensor_core.tensor import backward, parameters_finite


def smoothed(values: List[float], window: int = 50) -> float:
    """Mean of the trailing window"""
    if not values:
        raise ContractError("no values to smooth")
    return float(np.mean(values[-window:]))


def _diverge(state: TrainingState, step: int, reason: str, checkpoint_dir: Optional[Path]) -> None:
    path = None
    if checkpoint_dir is not None:
        path = save_checkpoint(state, Path(checkpoint_dir) / f"diverged_step{step}.ckpt")
    logger.error(f"Training diverged at step {step}: {reason}")
    raise DivergenceError(f"training diverged at step {step}: {reason}", checkpoint_path=path)


def pretrain(state: TrainingState, corpus: Corpus, steps: int, batch_size: int, seq_len: int,
             metrics: Optional[MetricsWriter] = None, stage_index: int = 0,
             checkpoint_dir: Optional[Path] = None, show_progress: bool = False) -> List[float]:
    """Run `steps` optimizer updates and return the per-step main next-token loss.

    The optimized objective also carries the MTP and balance terms; those go to
    the metrics rows (`loss`, `loss_mtp`, `loss_balance`) rather than the return value.

    Batches come from state.rng, so the run is a pure function of the state it
    starts from. A non-finite loss or parameter saves a diagnostic checkpoint
    (when checkpoint_dir is set) and raises DivergenceError.
    """
    if len(corpus.train_ids) == 0:
        raise ContractError("corpus has no training tokens")
    model = state.model
    params = model.parameters()
    losses = []
    logger.info(f"Pretraining: {steps} steps of {batch_size}x{seq_len} tokens, MTP depth {model.mtp_cfg.depth}")

    for step in tqdm(range(steps), desc="pretrain", disable=not show_progress):
        batch = corpus.sample_batch(state.rng, batch_size, seq_len)
        try:
            breakdown = model.loss(batch)
        except NumericError as exc:
            _diverge(state, step, str(exc), checkpoint_dir)
        value = breakdown.total.item()
        if not np.isfinite(value):
            _diverge(state, step, f"loss is {value}", checkpoint_dir)
        main = breakdown.main

        backward(breakdown.total)
        norm, _ = grad_norm(params)
        lr = state.optimizer.step(params)
        ratios = model.after_step()
        if not parameters_finite(params.values()):
            _diverge(state, step, "non-finite parameters after the update", checkpoint_dir)

        losses.append(main)
        if metrics is not None:
            row = breakdown.as_row()
            row.update({"lr": lr, "grad_norm": norm})
            if ratios:
                row["load_ratio"] = max(ratios.values())
            metrics.log(stage_index, "pretrain", step, row)
        if step % 100 == 0:
            logger.debug(f"pretrain step {step}: loss={value:.4f} main={main:.4f} lr={lr:.2e}")

    if losses:
        logger.info(f"Pretraining done: final smoothed main loss {smoothed(losses):.4f}")
    return losses
