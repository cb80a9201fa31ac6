"""
MTP Package
Multi-token prediction depths and their averaged cross-entropy objective
"""

from .mtp_config import MtpConfig
from .mtp_module import MtpModule, build_mtp_modules, mtp_depth_losses, mtp_forward, mtp_loss

__all__ = ['MtpConfig', 'MtpModule', 'build_mtp_modules', 'mtp_depth_losses', 'mtp_forward', 'mtp_loss']
