"""
MTP Configuration
"""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class MtpConfig(BaseModel):
    """depth (D) extra predicted tokens weighted by lambda; depth 0 disables MTP.

    d and vocab_size are optional cross-checks against the host model.
    """

    model_config = ConfigDict(extra='forbid', frozen=True, populate_by_name=True)

    depth: int = Field(default=1, ge=0, description="Number of extra predicted tokens D")
    lam: float = Field(default=0.3, ge=0, alias="lambda", description="MTP loss weight")
    d: Optional[int] = Field(default=None, gt=0)
    vocab_size: Optional[int] = Field(default=None, gt=0)

    @property
    def enabled(self) -> bool:
        return self.depth > 0
