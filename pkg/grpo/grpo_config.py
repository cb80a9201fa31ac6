"""
GRPO Configuration
"""

import sys
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

sys.path.append(str(Path(__file__).parent.parent))

from config import settings


class GrpoConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    epsilon: float = Field(default=0.2, gt=0, description="Clip range of the probability ratio")
    beta: float = Field(default=0.04, ge=0, description="KL weight against the reference policy")
    group_size: int = Field(default=8, ge=2, description="Outputs sampled per prompt (G)")
    supervision: Literal["outcome", "process"] = "outcome"
    std_floor: float = Field(default_factory=lambda: settings.std_floor, gt=0)
    kl_estimator: Literal["sampled", "exact"] = Field(
        default="sampled",
        description="sampled: per-token pi_ref/pi - log(pi_ref/pi) - 1; exact: vocabulary sum"
    )
    inner_epochs: int = Field(default=1, ge=1, description="Updates per sampled batch")
