"""
Stage Plan
Ordered training stages (pretrain, cold-start SFT, reasoning RL, rejection-sampling SFT, alignment proxy RL)
"""

from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from grpo.grpo_config import GrpoConfig
from grpo.trainer import grpo_step
from lm_harness.checkpointing import TrainingState, save_checkpoint
from lm_harness.corpus import Corpus
from lm_harness.metrics import MetricsWriter
from lm_harness.policy import LanguageModelPolicy, text_reward, text_step_reward
from lm_harness.pretrain import pretrain
from lm_harness.rejection_sampling import rejection_sample
from lm_harness.rewards import DEFAULT_TARGET_CHARSET, REWARDS, CompositeReward, reward_accuracy, reward_format
from lm_harness.sft import supervised_finetune, write_sft_dataset
from lm_harness.tasks import cold_start_records, sample_problem
from lm_harness.tokenizer import SPECIAL_TOKENS, TERMINATOR, CharTokenizer
from tensor_core.errors import ConfigError
from tensor_core.optim import Optimizer, OptimizerConfig

StageKind = Literal["pretrain", "cold_start_sft", "reasoning_rl", "rejection_sampling_sft", "rl_alignment_proxy"]
TASK_SYMBOLS = "0123456789+-=" + TERMINATOR


def _check_reward_names(weights: Optional[Dict[str, float]]) -> Optional[Dict[str, float]]:
    if weights is None:
        return weights
    if not weights:
        raise ConfigError("reward weights must name at least one reward")
    unknown = sorted(set(weights) - set(REWARDS))
    if unknown:
        raise ConfigError(f"unknown reward(s) {unknown}; registered: {sorted(REWARDS)}")
    return weights


class RewardsConfig(BaseModel):
    """Reward mixes for the RL stages and the rejection-sampling filter"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    reasoning: Dict[str, float] = Field(default_factory=lambda: {"accuracy": 1.0, "format": 1.0})
    alignment_proxy: Dict[str, float] = Field(default_factory=lambda: {"brevity": 1.0, "format": 1.0})
    rejection: Dict[str, float] = Field(default_factory=lambda: {"accuracy": 1.0})
    target_charset: str = DEFAULT_TARGET_CHARSET
    brevity_len: int = Field(default=24, gt=0)

    check_names = field_validator("reasoning", "alignment_proxy", "rejection")(_check_reward_names)

    def composite(self, weights: Dict[str, float]) -> CompositeReward:
        return CompositeReward(weights, self.target_charset, self.brevity_len)


class StageSpec(BaseModel):
    """One stage; fields a kind does not use are ignored"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    kind: StageKind
    steps: int = Field(default=200, ge=0, description="Optimizer updates")
    batch_size: int = Field(default=16, gt=0, description="Windows or records per update")
    seq_len: int = Field(default=64, gt=1, description="Pretraining window length")
    records: int = Field(default=2000, gt=0, description="Cold-start examples to generate")
    prompts: int = Field(default=64, gt=0, description="Rejection-sampling prompt count")
    prompts_per_step: int = Field(default=4, gt=0, description="RL prompts per GRPO step")
    n_per_prompt: int = Field(default=4, gt=0, description="Rejection-sampling completions per prompt")
    max_new_tokens: int = Field(default=24, gt=0)
    temperature: float = Field(default=1.0, gt=0)
    max_digits: int = Field(default=3, ge=1, le=3, description="Operand digits of task prompts")
    lr: Optional[float] = Field(default=None, ge=0, description="Overrides optimizer.lr for this stage")
    warmup_steps: Optional[int] = Field(default=None, ge=0)
    rewards: Optional[Dict[str, float]] = Field(default=None, description="Overrides the stage's reward mix")

    check_rewards = field_validator("rewards")(_check_reward_names)

    def optimizer_config(self, base: OptimizerConfig) -> OptimizerConfig:
        update = {key: value for key, value in (("lr", self.lr), ("warmup_steps", self.warmup_steps))
                  if value is not None}
        return base.model_copy(update=update)


class StagePlan(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    stages: List[StageSpec] = Field(default_factory=lambda: [StageSpec(kind="pretrain")])

    @property
    def kinds(self) -> List[str]:
        return [stage.kind for stage in self.stages]

    @property
    def needs_tasks(self) -> bool:
        return any(kind != "pretrain" for kind in self.kinds)


def validate_plan(plan: StagePlan, completed: Sequence[str] = (), tokenizer: Optional[CharTokenizer] = None,
                  corpus: Optional[Corpus] = None) -> None:
    """Stage dependency checks, run before any compute"""
    if not plan.stages:
        raise ConfigError("stage plan is empty")
    done = list(completed)
    for index, stage in enumerate(plan.stages):
        if stage.kind == "rejection_sampling_sft" and "reasoning_rl" not in done:
            raise ConfigError(
                f"stage {index} (rejection_sampling_sft) needs a reasoning_rl stage earlier in the plan "
                f"or in the base checkpoint")
        if stage.kind == "pretrain":
            if corpus is None:
                raise ConfigError(f"stage {index} (pretrain) needs a corpus")
            if len(corpus.train_ids) <= stage.seq_len:
                raise ConfigError(f"stage {index} (pretrain): corpus is shorter than one window of {stage.seq_len + 1}")
        done.append(stage.kind)

    if tokenizer is not None and plan.needs_tasks:
        missing = sorted(set(TASK_SYMBOLS) - set(tokenizer.vocab)) + \
            [tag for tag in SPECIAL_TOKENS if tag not in tokenizer.index]
        if missing:
            raise ConfigError(f"vocabulary lacks task symbols {missing}; post-training stages cannot run")


def _task_prompts(rng: np.random.Generator, n: int, max_digits: int) -> List[str]:
    return [sample_problem(rng, max_digits).prompt for _ in range(n)]


def _run_grpo(state: TrainingState, spec: StageSpec, reward: CompositeReward, grpo_cfg: GrpoConfig,
              metrics: Optional[MetricsWriter], stage_index: int, proxy: bool) -> None:
    policy = LanguageModelPolicy(state.model, state.tokenizer, spec.max_new_tokens, spec.temperature)
    reference = policy.snapshot()
    if grpo_cfg.supervision == "process":
        reward_fn = text_step_reward(state.tokenizer, reward)
    else:
        reward_fn = text_reward(state.tokenizer, reward)
    for step in range(spec.steps):
        prompts = _task_prompts(state.rng, spec.prompts_per_step, spec.max_digits)
        result = grpo_step(policy, reference, prompts, reward_fn, grpo_cfg, state.optimizer, state.rng)
        state.model.after_step()

        completions = [(group.prompt, state.tokenizer.decode(output))
                       for group in result.groups for output in group.outputs]
        row = dict(result.metrics)
        row["format_rate"] = float(np.mean([reward_format(c) for _, c in completions]))
        row["accuracy"] = float(np.mean([reward_accuracy(p, c) for p, c in completions]))
        if proxy:
            row["proxy_reward"] = 1
        if metrics is not None:
            metrics.log(stage_index, spec.kind, step, row)
        logger.debug(f"{spec.kind} step {step}: reward={row['mean_reward']:.3f} "
                     f"format={row['format_rate']:.2f} kl={row['kl']:.4f}")


def run_stage(state: TrainingState, spec: StageSpec, stage_index: int, corpus: Optional[Corpus],
              grpo_cfg: GrpoConfig, rewards_cfg: RewardsConfig, optimizer_cfg: OptimizerConfig,
              out_dir: Optional[Path], metrics: Optional[MetricsWriter], show_progress: bool = False) -> None:
    state.optimizer = Optimizer(spec.optimizer_config(optimizer_cfg))
    logger.info(f"Stage {stage_index}: {spec.kind}")

    if spec.kind == "pretrain":
        pretrain(state, corpus, spec.steps, spec.batch_size, spec.seq_len, metrics, stage_index,
                 checkpoint_dir=out_dir, show_progress=show_progress)
    elif spec.kind == "cold_start_sft":
        records = cold_start_records(int(state.rng.integers(2 ** 31)), spec.records, spec.max_digits)
        supervised_finetune(state, records, spec.steps, spec.batch_size, metrics, stage_index, spec.kind)
    elif spec.kind == "reasoning_rl":
        reward = rewards_cfg.composite(spec.rewards or rewards_cfg.reasoning)
        _run_grpo(state, spec, reward, grpo_cfg, metrics, stage_index, proxy=False)
    elif spec.kind == "rl_alignment_proxy":
        logger.info("rl_alignment_proxy optimizes a rule-based stand-in (brevity + format), "
                    "not a learned preference reward")
        reward = rewards_cfg.composite(spec.rewards or rewards_cfg.alignment_proxy)
        _run_grpo(state, spec, reward, grpo_cfg, metrics, stage_index, proxy=True)
    elif spec.kind == "rejection_sampling_sft":
        policy = LanguageModelPolicy(state.model, state.tokenizer, spec.max_new_tokens, spec.temperature)
        prompts = _task_prompts(state.rng, spec.prompts, spec.max_digits)
        reward = rewards_cfg.composite(spec.rewards or rewards_cfg.rejection)
        records = rejection_sample(policy, prompts, reward, spec.n_per_prompt, state.rng)
        if out_dir is not None:
            write_sft_dataset(records, Path(out_dir) / f"stage{stage_index}_rejection_sft.jsonl")
        if metrics is not None:
            metrics.log(stage_index, spec.kind, -1, {"kept_records": len(records)})
        if records:
            supervised_finetune(state, records, spec.steps, spec.batch_size, metrics, stage_index, spec.kind)
        else:
            logger.warning(f"Stage {stage_index}: no records survived, skipping fine-tuning")


def run_stage_plan(plan: StagePlan, state: TrainingState, corpus: Optional[Corpus] = None,
                   grpo_cfg: Optional[GrpoConfig] = None, rewards_cfg: Optional[RewardsConfig] = None,
                   optimizer_cfg: Optional[OptimizerConfig] = None, out_dir: Optional[Path] = None,
                   metrics: Optional[MetricsWriter] = None, show_progress: bool = False) -> TrainingState:
    """Run every stage in order on state, checkpointing after each one when out_dir is set"""
    grpo_cfg = grpo_cfg or GrpoConfig()
    rewards_cfg = rewards_cfg or RewardsConfig()
    optimizer_cfg = optimizer_cfg or state.optimizer.cfg
    validate_plan(plan, state.stages_completed, state.tokenizer, corpus)

    for index, spec in enumerate(plan.stages):
        run_stage(state, spec, index, corpus, grpo_cfg, rewards_cfg, optimizer_cfg, out_dir, metrics, show_progress)
        state.stages_completed.append(spec.kind)
        if out_dir is not None:
            save_checkpoint(state, Path(out_dir) / f"stage{index}_{spec.kind}.ckpt")
    if out_dir is not None:
        save_checkpoint(state, Path(out_dir) / "final.ckpt")
    return state
