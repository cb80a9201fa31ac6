"""
Supervised Fine-Tuning
Completion-only cross-entropy over (prompt, completion) records, shared by the cold-start and rejection-sampling stages
"""

import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from lm_harness.checkpointing import TrainingState
from lm_harness.metrics import MetricsWriter
from lm_harness.model import ToyModel
from lm_harness.tokenizer import CharTokenizer
from tensor_core.errors import ConfigError, ContractError, DivergenceError
from tensor_core.tensor import Tensor, backward, cross_entropy, take_rows

SFT_FORMAT_TAG = "dstoy-sft/1"

Record = Tuple[str, str]


def write_sft_dataset(records: Sequence[Record], path: Union[str, Path]) -> Path:
    """JSON lines: a format record first, then one {prompt, completion} object per line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": SFT_FORMAT_TAG}) + "\n")
        for prompt, completion in records:
            f.write(json.dumps({"prompt": prompt, "completion": completion}, ensure_ascii=False) + "\n")
    logger.info(f"Wrote {len(records)} SFT records to {path}")
    return path


def read_sft_dataset(path: Union[str, Path]) -> List[Record]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"SFT dataset not found: {path}")
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines or json.loads(lines[0]).get("format") != SFT_FORMAT_TAG:
        raise ConfigError(f"{path} does not start with the {SFT_FORMAT_TAG} format record")
    records = []
    for line in lines[1:]:
        item = json.loads(line)
        records.append((item["prompt"], item["completion"]))
    return records


def completion_loss(model: ToyModel, tokenizer: CharTokenizer, records: Sequence[Record]) -> Tuple[Tensor, int]:
    """Mean cross-entropy of the completion tokens of a right-padded batch, plus the token count"""
    encoded = [(tokenizer.encode(p), tokenizer.encode(c)) for p, c in records]
    if any(not p or not c for p, c in encoded):
        raise ContractError("SFT records need a nonempty prompt and completion")
    width = max(len(p) + len(c) - 1 for p, c in encoded)
    batch = np.full((len(encoded), width), tokenizer.terminator_id, dtype=np.int64)
    rows, targets = [], []
    for i, (p, c) in enumerate(encoded):
        sequence = p + c
        batch[i, :len(sequence) - 1] = sequence[:-1]
        rows.extend(i * width + np.arange(len(p) - 1, len(sequence) - 1))
        targets.extend(c)

    h, balance = model.hidden(batch)
    logits = model.head(take_rows(h, np.asarray(rows, dtype=np.int64)))
    return cross_entropy(logits, np.asarray(targets, dtype=np.int64)) + balance, len(targets)


def supervised_finetune(state: TrainingState, records: Sequence[Record], steps: int, batch_size: int,
                        metrics: Optional[MetricsWriter] = None, stage_index: int = 0,
                        stage: str = "sft") -> List[float]:
    """Minibatch SFT on the main model; minibatches are drawn with state.rng"""
    if not records:
        raise ContractError("SFT needs at least one record")
    model = state.model
    params = model.parameters(include_mtp=False)
    losses = []
    logger.info(f"{stage}: {steps} steps over {len(records)} records")
    for step in range(steps):
        picks = state.rng.integers(0, len(records), size=min(batch_size, len(records)))
        loss, n_tokens = completion_loss(model, state.tokenizer, [records[i] for i in picks])
        value = loss.item()
        if not np.isfinite(value):
            logger.error(f"{stage} diverged at step {step}")
            raise DivergenceError(f"{stage} loss is {value} at step {step}")
        backward(loss)
        lr = state.optimizer.step(params)
        model.after_step()
        losses.append(value)
        if metrics is not None:
            metrics.log(stage_index, stage, step, {"loss": value, "tokens": n_tokens, "lr": lr})
    return losses
