#!/usr/bin/env python3
"""
DeepSeek Toy Stack - Main Entry Point
Command-line interface for training runs, evaluation and mechanism inspection
"""

import math
import sys
from pathlib import Path

import click
import numpy as np
from loguru import logger
from rich.console import Console
from rich.markup import escape
from rich.table import Table

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from attention.kv_cache import cache_size_table
from config import settings
from lm_harness.checkpointing import TrainingState, load_checkpoint
from lm_harness.corpus import load_corpus
from lm_harness.evaluation import arithmetic_eval, validation_loss
from lm_harness.metrics import MetricsWriter
from lm_harness.policy import LanguageModelPolicy
from lm_harness.stage_plan import TASK_SYMBOLS, run_stage_plan
from moe.balance import load_summary
from moe.moe_layer import expert_parameter_counts
from moe.router import RouterState, route_tokens
from run_config import RunConfig, default_config_yaml, load_run_config, with_overrides
from tensor_core.errors import ConfigError, ContractError, DivergenceError, NumericError, RewardError
from tensor_core.tensor import Tensor, no_grad, set_default_dtype

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# Initialize Rich consoles
console = Console()
err_console = Console(stderr=True)


def fail(code: int, message: str) -> None:
    err_console.print(f"[red]Error: {escape(message)}[/red]", highlight=False, soft_wrap=True)
    sys.exit(code)


def _load_config(config_path) -> RunConfig:
    return load_run_config(config_path) if config_path else RunConfig()


def _frame_table(df, title: str) -> Table:
    table = Table(title=title)
    for column in df.columns:
        table.add_column(str(column), justify="left" if df[column].dtype == object else "right")
    for row in df.itertuples(index=False):
        table.add_row(*[f"{v:g}" if isinstance(v, float) else str(v) for v in row])
    return table


@click.group()
def cli():
    """DeepSeek Toy Stack - MLA, DeepSeekMoE, MTP and GRPO at desk scale"""
    pass


@cli.command()
@click.option('--config', '-c', 'config_path', required=True,
              type=click.Path(path_type=Path),
              help='Run configuration YAML')
@click.option('--seed', type=int, default=None,
              help='Override the configured seed')
@click.option('--out', '-o', 'out_dir', type=click.Path(path_type=Path), default=None,
              help='Override the output directory')
@click.option('--progress/--no-progress', default=False,
              help='Show a progress bar during pretraining')
def train(config_path, seed, out_dir, progress):
    """Run the configured stage plan, writing checkpoints and a metrics CSV"""
    try:
        cfg = with_overrides(load_run_config(config_path), seed, out_dir)
    except ConfigError as e:
        fail(EXIT_CONFIG, str(e))

    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log_name = settings.log_file.name if settings.log_file else "dstoy.log"
    sink = logger.add(run_dir / log_name, rotation="10 MB", level=settings.log_level)
    try:
        set_default_dtype(cfg.precision)
        (run_dir / "config.resolved.yaml").write_text(cfg.to_yaml(), encoding="utf-8")

        try:
            if cfg.base_checkpoint is not None:
                state = load_checkpoint(cfg.base_checkpoint, expected_model=cfg.model)
                corpus = load_corpus(cfg.corpus, cfg.seed, state.tokenizer) if "pretrain" in cfg.plan.kinds else None
            else:
                extra = TASK_SYMBOLS if cfg.plan.needs_tasks else ""
                corpus = load_corpus(cfg.corpus, cfg.seed, extra_symbols=extra)
                state = TrainingState.fresh(cfg.model, corpus.tokenizer, cfg.seed, cfg.mtp,
                                            cfg.optimizer, cfg.to_dict())
        except ContractError as e:
            raise ConfigError(str(e)) from e

        console.print(f"\n[bold cyan]Training[/bold cyan] {' -> '.join(cfg.plan.kinds)} "
                      f"(seed {cfg.seed}, {cfg.precision}, {state.model.parameter_count()} parameters)")
        metrics = MetricsWriter()
        try:
            run_stage_plan(cfg.plan, state, corpus, cfg.grpo, cfg.rewards, cfg.optimizer,
                           out_dir=run_dir, metrics=metrics, show_progress=progress)
        finally:
            metrics_path = metrics.write(run_dir / "metrics.csv")

        table = Table(title="Run Summary")
        table.add_column("Item", style="cyan")
        table.add_column("Value")
        table.add_row("Stages", ", ".join(state.stages_completed))
        table.add_row("Metrics", str(metrics_path))
        table.add_row("Final checkpoint", str(run_dir / "final.ckpt"))
        console.print(table)
    except ConfigError as e:
        fail(EXIT_CONFIG, str(e))
    except DivergenceError as e:
        where = e.checkpoint_path
        fail(EXIT_NUMERIC, f"{e}" + (f" (diagnostic checkpoint: {where})" if where else ""))
    except (NumericError, RewardError) as e:
        fail(EXIT_NUMERIC, str(e))
    finally:
        logger.remove(sink)


@cli.command(name='eval')
@click.option('--checkpoint', '-k', type=click.Path(path_type=Path), default=None,
              help='Checkpoint to evaluate; a freshly initialized model when omitted')
@click.option('--task', type=click.Choice(['lm', 'arithmetic']), default='lm',
              help='lm: validation loss; arithmetic: accuracy and format rate')
@click.option('--config', '-c', 'config_path', type=click.Path(path_type=Path), default=None,
              help='Run configuration (corpus, model, precision)')
@click.option('--seq-len', type=int, default=64, help='Validation window length')
@click.option('--problems', type=int, default=64, help='Arithmetic problems to score')
def evaluate(checkpoint, task, config_path, seq_len, problems):
    """Print evaluation metrics as key=value lines"""
    try:
        cfg = _load_config(config_path)
        set_default_dtype(cfg.precision)
        corpus = None
        if checkpoint is not None:
            state = load_checkpoint(checkpoint, expected_model=cfg.model if config_path else None)
        else:
            corpus = load_corpus(cfg.corpus, cfg.seed, extra_symbols=TASK_SYMBOLS if task == 'arithmetic' else "")
            state = TrainingState.fresh(cfg.model, corpus.tokenizer, cfg.seed, cfg.mtp)
        policy = LanguageModelPolicy(state.model, state.tokenizer)

        if task == 'lm':
            corpus = corpus or load_corpus(cfg.corpus, cfg.seed, state.tokenizer)
            values = {"loss": validation_loss(policy, corpus, seq_len),
                      "ln_vocab": math.log(state.tokenizer.size),
                      "vocab_size": state.tokenizer.size}
        else:
            values = arithmetic_eval(policy, problems)
    except (ConfigError, ContractError) as e:
        fail(EXIT_CONFIG, str(e))
    except NumericError as e:
        fail(EXIT_NUMERIC, str(e))

    for key, value in values.items():
        click.echo(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")


@cli.command()
@click.argument('subject', type=click.Choice(['attention', 'moe']))
@click.option('--config', '-c', 'config_path', type=click.Path(path_type=Path), default=None,
              help='Run configuration; defaults when omitted')
@click.option('--checkpoint', '-k', type=click.Path(path_type=Path), default=None,
              help='Report routing with the biases of this checkpoint')
@click.option('--seq-len', type=int, default=1024, help='Sequence length of the per-sequence column')
@click.option('--tokens', type=int, default=4096, help='Random tokens routed for the routing summary')
def inspect(subject, config_path, checkpoint, seq_len, tokens):
    """Report KV-cache sizes (attention) or expert counts and routing (moe)"""
    try:
        cfg = _load_config(config_path)
        if subject == 'attention':
            report_attention(cfg, seq_len)
        else:
            report_moe(cfg, checkpoint, tokens)
    except (ConfigError, ContractError) as e:
        fail(EXIT_CONFIG, str(e))


def report_attention(cfg: RunConfig, seq_len: int) -> None:
    attention = cfg.model.attention
    table = cache_size_table(attention, seq_len)
    console.print(_frame_table(table, f"KV cache per token, l={attention.l} (sequence length {seq_len})"))


def report_moe(cfg: RunConfig, checkpoint, n_tokens: int) -> None:
    moe_cfg = cfg.model.moe
    total, active = expert_parameter_counts(moe_cfg)
    table = Table(title="Expert Parameters")
    table.add_column("Item", style="cyan")
    table.add_column("Value", justify="right")
    table.add_row("experts (shared + routed)", f"{moe_cfg.n_shared} + {moe_cfg.n_routed}")
    table.add_row("routed per token", str(moe_cfg.k_routed))
    table.add_row("expert inner dim", str(moe_cfg.expert_inner))
    table.add_row("total expert params", str(total))
    table.add_row("activated expert params per token", str(active))
    console.print(table)

    if checkpoint is not None:
        routers = load_checkpoint(checkpoint, expected_model=cfg.model).model.routers()
    else:
        routers = {"block0": RouterState.init(moe_cfg, cfg.seed, "block0.router", cfg.model.init_std)}

    tokens = np.random.default_rng(cfg.seed).standard_normal((n_tokens, moe_cfg.d))
    for name, router in routers.items():
        with no_grad():
            routing = route_tokens(Tensor(tokens), router, moe_cfg)
        loads = routing.mask.sum(axis=0)
        summary = load_summary(loads)
        routing_table = Table(title=f"Routing of {n_tokens} random tokens: {name} ({router.routing_mode})")
        for column in ("expert", "load", "share", "bias"):
            routing_table.add_column(column, justify="right")
        for i, load in enumerate(loads):
            routing_table.add_row(str(i), str(int(load)), f"{load / max(loads.sum(), 1):.4f}",
                                  f"{router.bias[i]:+.6f}")
        console.print(routing_table)
        console.print(f"max/mean load ratio: {summary['max_over_mean']:.4f}")


@cli.command('print-default-config')
def print_default_config():
    """Print a complete run configuration with every default filled in"""
    click.echo(default_config_yaml(), nl=False)


if __name__ == "__main__":
    # Setup logging
    logger.remove()
    logger.add(
        sys.stderr,
        level="WARNING",
        format="<yellow>{level}</yellow> {message}"
    )

    # Run CLI
    cli()
