"""
LM Harness Package
Toy language model, corpus, rule-based rewards, training stages and evaluation
"""

from .tokenizer import CharTokenizer
from .tasks import ArithmeticProblem, cold_start_records, parse_prompt, sample_problems
from .corpus import Corpus, CorpusConfig, load_corpus
from .rewards import (
    REWARDS, CompositeReward, reward_accuracy, reward_brevity, reward_format, reward_language_consistency,
    reward_reasoning_step
)
from .model import LossBreakdown, ModelConfig, ToyModel, analytic_parameter_count
from .policy import LanguageModelPolicy, text_reward, text_step_reward
from .metrics import MetricsWriter, read_metrics
from .checkpointing import TrainingState, load_checkpoint, save_checkpoint
from .pretrain import pretrain, smoothed
from .sft import read_sft_dataset, supervised_finetune, write_sft_dataset
from .rejection_sampling import rejection_sample, survivor_fraction
from .evaluation import arithmetic_eval, validation_loss
from .stage_plan import RewardsConfig, StagePlan, StageSpec, run_stage_plan, validate_plan

__all__ = [
    'CharTokenizer', 'ArithmeticProblem', 'cold_start_records', 'parse_prompt', 'sample_problems',
    'Corpus', 'CorpusConfig', 'load_corpus',
    'REWARDS', 'CompositeReward', 'reward_accuracy', 'reward_brevity', 'reward_format',
    'reward_language_consistency', 'reward_reasoning_step',
    'LossBreakdown', 'ModelConfig', 'ToyModel', 'analytic_parameter_count',
    'LanguageModelPolicy', 'text_reward', 'text_step_reward', 'MetricsWriter', 'read_metrics',
    'TrainingState', 'load_checkpoint', 'save_checkpoint', 'pretrain', 'smoothed',
    'read_sft_dataset', 'supervised_finetune', 'write_sft_dataset',
    'rejection_sample', 'survivor_fraction', 'arithmetic_eval', 'validation_loss',
    'RewardsConfig', 'StagePlan', 'StageSpec', 'run_stage_plan', 'validate_plan'
]
