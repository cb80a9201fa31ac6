"""
Error types shared by every module of the mechanism stack
"""


class DimensionError(ValueError):
    """Operand shapes do not fit the operation"""


class ContractError(ValueError):
    """A documented precondition of an operation was violated"""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range"""


class NumericError(ArithmeticError):
    """A numeric primitive received or produced NaN"""


class DivergenceError(NumericError):
    """Training loss became non-finite"""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class RewardError(RuntimeError):
    """A reward function failed while scoring a rollout"""
