"""
MoE Package
DeepSeekMoE routing, expert FFNs, balance loss and loss-free bias updates
"""

from .moe_config import MoeLayerConfig, check_counts
from .router import Routing, RouterState, bias_update, route, route_tokens, top_k_indices
from .balance import (
    balance_loss, expert_balance_loss, load_fractions, load_ratio, load_summary, mean_affinity
)
from .moe_layer import FeedForward, MoeExperts, expert_parameter_counts, moe_forward

__all__ = [
    'MoeLayerConfig', 'check_counts',
    'Routing', 'RouterState', 'bias_update', 'route', 'route_tokens', 'top_k_indices',
    'balance_loss', 'expert_balance_loss', 'load_fractions', 'load_ratio', 'load_summary',
    'mean_affinity',
    'FeedForward', 'MoeExperts', 'expert_parameter_counts', 'moe_forward'
]
