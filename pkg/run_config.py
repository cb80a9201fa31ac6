"""
Run Configuration
One versioned YAML file pins everything a run computes: seed, precision, corpus, model, stages
"""

from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import settings
from grpo.grpo_config import GrpoConfig
from lm_harness.corpus import CorpusConfig
from lm_harness.model import ModelConfig
from lm_harness.stage_plan import RewardsConfig, StagePlan
from mtp.mtp_config import MtpConfig
from tensor_core.errors import ConfigError
from tensor_core.optim import OptimizerConfig

CONFIG_FORMAT_TAG = "dstoy-config/1"


class RunConfig(BaseModel):
    """Validated as a whole before any compute; unknown keys are rejected at every level"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    format: Literal["dstoy-config/1"] = CONFIG_FORMAT_TAG
    seed: int = Field(default=0, ge=0)
    precision: Literal["float64", "float32"] = Field(default_factory=lambda: settings.default_precision)
    output_dir: Path = Field(default_factory=lambda: settings.runs_dir / "run")
    base_checkpoint: Optional[Path] = Field(default=None, description="Resume from this checkpoint")
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    mtp: MtpConfig = Field(default_factory=MtpConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    grpo: GrpoConfig = Field(default_factory=GrpoConfig)
    rewards: RewardsConfig = Field(default_factory=RewardsConfig)
    plan: StagePlan = Field(default_factory=StagePlan)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _key_line(root: Optional[yaml.Node], loc: tuple) -> Optional[int]:
    """1-based line of the deepest node along loc that exists in the YAML tree"""
    node, line = root, None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == str(part)), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    if line is None and root is not None:
        line = root.start_mark.line + 1
    return line


def _format_errors(exc: ValidationError, root: Optional[yaml.Node], source: str) -> str:
    lines = []
    for error in exc.errors():
        loc = tuple(error["loc"])
        where = ".".join(str(p) for p in loc) or "<root>"
        line = _key_line(root, loc)
        prefix = f"{source}:{line}" if line else source
        lines.append(f"{prefix}: {where}: {error['msg']}")
    return "\n".join(lines)


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: a run config must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source)) from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = parse_run_config(path.read_text(encoding="utf-8"), str(path))
    logger.debug(f"Loaded run config {path}: plan {config.plan.kinds}")
    return config


def with_overrides(config: RunConfig, seed: Optional[int] = None, output_dir: Optional[Path] = None) -> RunConfig:
    update: Dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    if output_dir is not None:
        update["output_dir"] = Path(output_dir)
    if not update:
        return config
    try:
        return RunConfig.model_validate({**config.to_dict(), **update})
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, None, "<command line>")) from exc


def default_config_yaml() -> str:
    return f"# {CONFIG_FORMAT_TAG}: every field with its default\n" + RunConfig().to_yaml()
