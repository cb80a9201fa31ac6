"""
Model Checkpoints
Everything needed to resume a run bit-exactly, stored in one tensor archive
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from lm_harness.model import ModelConfig, ToyModel
from lm_harness.tokenizer import CharTokenizer
from mtp.mtp_config import MtpConfig
from tensor_core.checkpoint import load_archive, save_archive
from tensor_core.errors import ConfigError, ContractError
from tensor_core.optim import Optimizer, OptimizerConfig

CHECKPOINT_KIND = "dstoy-checkpoint/1"


@dataclass
class TrainingState:
    """Model, tokenizer, optimizer and data RNG of a run plus its finished stages"""

    model: ToyModel
    tokenizer: CharTokenizer
    optimizer: Optimizer
    rng: np.random.Generator
    stages_completed: List[str] = field(default_factory=list)
    run_config: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def fresh(cls, model_cfg: ModelConfig, tokenizer: CharTokenizer, seed: int,
              mtp_cfg: Optional[MtpConfig] = None, optimizer_cfg: Optional[OptimizerConfig] = None,
              run_config: Optional[Dict[str, Any]] = None) -> "TrainingState":
        model = ToyModel(model_cfg, tokenizer.size, seed, mtp_cfg)
        return cls(model=model, tokenizer=tokenizer, optimizer=Optimizer(optimizer_cfg),
                   rng=np.random.default_rng(seed), run_config=run_config or {})


def save_checkpoint(state: TrainingState, path: Union[str, Path]) -> Path:
    model = state.model
    arrays = {f"param.{name}": p.data for name, p in model.parameters().items()}
    arrays.update({f"router_bias.{name}": router.bias for name, router in model.routers().items()})
    arrays.update(state.optimizer.state_arrays())
    metadata = {
        "kind": CHECKPOINT_KIND,
        "model": model.cfg.model_dump(mode="json"),
        "mtp": model.mtp_cfg.model_dump(mode="json", by_alias=True),
        "seed": model.seed,
        "vocab": state.tokenizer.vocab,
        "optimizer": state.optimizer.cfg.model_dump(mode="json"),
        "optimizer_step": state.optimizer.step_count,
        "rng_state": state.rng.bit_generator.state,
        "stages_completed": list(state.stages_completed),
        "run_config": state.run_config,
    }
    path = save_archive(path, arrays, metadata)
    logger.info(f"Saved checkpoint {path} (stages: {state.stages_completed or 'none'})")
    return path


def _restore_generator(rng_state: Dict[str, Any]) -> np.random.Generator:
    bit_generator = getattr(np.random, rng_state["bit_generator"])()
    bit_generator.state = rng_state
    return np.random.Generator(bit_generator)


def load_checkpoint(path: Union[str, Path], expected_model: Optional[ModelConfig] = None) -> TrainingState:
    """Rebuild a TrainingState. A shape or config disagreement raises ConfigError."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        arrays, meta = load_archive(path)
    except (ContractError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a model checkpoint (kind {meta.get('kind')!r})")

    try:
        model_cfg = ModelConfig.model_validate(meta["model"])
        mtp_cfg = MtpConfig.model_validate(meta["mtp"])
        optimizer_cfg = OptimizerConfig.model_validate(meta["optimizer"])
    except ValidationError as exc:
        raise ConfigError(f"checkpoint {path} carries an invalid config: {exc}") from exc
    if expected_model is not None and expected_model != model_cfg:
        raise ConfigError(f"checkpoint {path} was trained with a different model config")

    tokenizer = CharTokenizer(meta["vocab"])
    model = ToyModel(model_cfg, tokenizer.size, meta["seed"], mtp_cfg)
    for name, param in model.parameters().items():
        key = f"param.{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint {path} has no tensor {name}")
        if arrays[key].shape != param.shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {arrays[key].shape}, model expects {param.shape}")
        param.data = arrays[key].astype(param.data.dtype)
    for name, router in model.routers().items():
        router.bias = arrays[f"router_bias.{name}"].copy()

    optimizer = Optimizer(optimizer_cfg)
    optimizer.load_state(arrays, meta["optimizer_step"])
    logger.info(f"Loaded checkpoint {path} (stages: {meta['stages_completed'] or 'none'})")
    return TrainingState(model=model, tokenizer=tokenizer, optimizer=optimizer,
                         rng=_restore_generator(meta["rng_state"]),
                         stages_completed=list(meta["stages_completed"]),
                         run_config=meta.get("run_config", {}))
