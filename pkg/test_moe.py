#!/usr/bin/env python
"""
Tests for DeepSeekMoE routing, expert dispatch, the balance loss and loss-free bias updates
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add parent directory to path
sys.path.append(str(Path(__file__).parent))

from moe import (
    MoeExperts, MoeLayerConfig, RouterState, balance_loss, bias_update, expert_balance_loss,
    expert_parameter_counts, load_fractions, load_ratio, load_summary, moe_forward, route,
    route_tokens, top_k_indices
)
from tensor_core import (
    ConfigError, ContractError, DimensionError, Optimizer, OptimizerConfig, Tensor, backward,
    gradcheck, mul, no_grad, sum_
)


def fixed_router(log_scores, bias=None, mode="aux_loss") -> RouterState:
    """Router on d=1 whose affinities for input [1.0] are softmax(log_scores)"""
    centroids = Tensor(np.asarray(log_scores, dtype=float).reshape(-1, 1), requires_grad=True)
    bias = np.zeros(len(log_scores)) if bias is None else np.asarray(bias, dtype=float)
    return RouterState(centroids=centroids, bias=bias, routing_mode=mode)


def scalar_config(n_routed: int, k: int = 1, mode: str = "aux_loss") -> MoeLayerConfig:
    return MoeLayerConfig(d=1, n_experts=n_routed, segments=1, top_k=k, n_shared=0, ffn_inner=2,
                          routing_mode=mode)


SKEWED = MoeLayerConfig(d=8, n_experts=8, segments=1, top_k=2, n_shared=0, ffn_inner=8,
                        gamma=0.01, routing_mode="loss_free")


def skewed_router(cfg: MoeLayerConfig) -> RouterState:
    """One axis-aligned centroid per expert, so token coordinate i is expert i's logit"""
    centroids = Tensor(np.eye(cfg.n_routed, cfg.d), requires_grad=True)
    return RouterState(centroids=centroids, bias=np.zeros(cfg.n_routed), routing_mode=cfg.routing_mode)


def skewed_tokens(rng: np.random.Generator, n: int, lean: float = 2.0) -> np.ndarray:
    """Standard normal tokens whose expert-0 logit is shifted up by lean"""
    tokens = rng.standard_normal((n, SKEWED.d))
    tokens[:, 0] += lean
    return tokens


def batch_loads(tokens: np.ndarray, state: RouterState, cfg: MoeLayerConfig) -> np.ndarray:
    with no_grad():
        return route_tokens(Tensor(tokens), state, cfg).mask.sum(axis=0)


# -- config --------------------------------------------------------------

def test_counts():
    cfg = MoeLayerConfig(d=8, n_experts=4, segments=4, top_k=2, n_shared=1, ffn_inner=64)
    assert (cfg.n_total, cfg.n_routed, cfg.k_routed, cfg.expert_inner) == (16, 15, 7, 16)


@pytest.mark.parametrize("overrides", [
    {"segments": 3},
    {"n_shared": 2, "segments": 1, "top_k": 2},
    {"top_k": 5, "segments": 1, "n_shared": 0},
    {"gamma": -0.1},
])
def test_invalid_configs(overrides):
    base = {"d": 8, "n_experts": 4, "segments": 2, "top_k": 1, "n_shared": 1, "ffn_inner": 8}
    with pytest.raises(ValidationError):
        MoeLayerConfig(**{**base, **overrides})


def test_segmentation_keeps_parameter_counts():
    shapes = [(1, 2, 0), (4, 2, 0), (4, 2, 1)]
    counts = set()
    for segments, top_k, n_shared in shapes:
        cfg = MoeLayerConfig(d=16, n_experts=4, segments=segments, top_k=top_k, n_shared=n_shared, ffn_inner=64)
        total, active = expert_parameter_counts(cfg)
        experts = MoeExperts.init(cfg, 0)
        assert total == sum(p.size for p in experts.parameters().values())
        counts.add((total, active))
    assert counts == {(4 * 2 * 16 * 64, 2 * 2 * 16 * 64)}


# -- routing -------------------------------------------------------------

def test_route_selects_top_affinity():
    state = fixed_router(np.log([0.5, 0.3, 0.2]))
    gates, selected = route(Tensor([1.0]), state, scalar_config(3))
    assert selected == [0]
    assert gates[0] == pytest.approx(0.5, abs=1e-12)


def test_loss_free_selection_keeps_original_gate():
    cfg = scalar_config(2, mode="loss_free")
    state = fixed_router(np.log([0.5, 0.3]), bias=[-0.4, 0.0], mode="loss_free")
    gates, selected = route(Tensor([1.0]), state, cfg)
    assert selected == [1]
    assert gates == {1: pytest.approx(0.3, abs=1e-12)}


def test_bias_ignored_in_aux_loss_mode():
    state = fixed_router(np.log([0.5, 0.3]), bias=[-0.4, 0.0])
    _, selected = route(Tensor([1.0]), state, scalar_config(2))
    assert selected == [0]


def test_ties_go_to_lowest_index():
    assert top_k_indices(np.array([[1.0, 1.0, 1.0], [0.2, 0.7, 0.7]]), 2).tolist() == [[0, 1], [1, 2]]
    state = fixed_router([0.0, 0.0, 0.0], bias=[0.1, 0.1, 0.1], mode="loss_free")
    _, selected = route(Tensor([1.0]), state, scalar_config(3, k=2, mode="loss_free"))
    assert selected == [0, 1]


def test_exactly_k_gates_and_original_affinities():
    cfg = MoeLayerConfig(d=6, n_experts=4, segments=2, top_k=2, n_shared=1, ffn_inner=8,
                         routing_mode="loss_free")
    rng = np.random.default_rng(0)
    state = RouterState.init(cfg, 0, std=1.0)
    state.bias = rng.normal(0, 0.3, cfg.n_routed)
    u = rng.standard_normal((10, 6))
    routing = route_tokens(Tensor(u), state, cfg)
    gates = routing.gates.data

    logits = u @ state.centroids.data.T
    expected = np.exp(logits - logits.max(axis=1, keepdims=True))
    expected /= expected.sum(axis=1, keepdims=True)
    assert ((gates != 0).sum(axis=1) == cfg.k_routed).all()
    np.testing.assert_allclose(gates[routing.mask == 1], expected[routing.mask == 1], atol=1e-14)


def test_router_shape_errors():
    cfg = scalar_config(2)
    with pytest.raises(DimensionError):
        route_tokens(Tensor(np.zeros((3, 2))), fixed_router([0.0, 0.0]), cfg)
    with pytest.raises(DimensionError):
        route_tokens(Tensor(np.zeros((3, 1))), fixed_router([0.0, 0.0, 0.0]), cfg)


# -- layer ---------------------------------------------------------------

def test_zero_routed_experts_leave_shared_plus_residual():
    cfg = MoeLayerConfig(d=6, n_experts=3, segments=2, top_k=1, n_shared=1, ffn_inner=8)
    experts = MoeExperts.init(cfg, 0, std=0.5)
    for expert in experts.routed:
        expert.w_out.data[:] = 0.0
    state = RouterState.init(cfg, 0, std=0.5)
    u = Tensor(np.random.default_rng(0).standard_normal((5, 6)))
    h, _ = moe_forward(u, experts, state, cfg)
    np.testing.assert_allclose(h.data, experts.shared[0](u).data + u.data, atol=1e-14)


def test_conventional_moe_oracle():
    cfg = MoeLayerConfig(d=6, n_experts=4, segments=1, top_k=2, n_shared=0, ffn_inner=5)
    experts = MoeExperts.init(cfg, 1, std=0.5)
    state = RouterState.init(cfg, 1, std=0.5)
    u = np.random.default_rng(1).standard_normal((7, 6))
    h, _ = moe_forward(Tensor(u), experts, state, cfg)

    def silu(x):
        return x / (1 + np.exp(-x))

    for t in range(7):
        logits = state.centroids.data @ u[t]
        s = np.exp(logits - logits.max())
        s /= s.sum()
        expected = u[t].copy()
        for i in np.argsort(-s, kind="stable")[:2]:
            expert = experts.routed[i]
            expected += s[i] * (expert.w_out.data @ silu(expert.w_in.data @ u[t]))
        np.testing.assert_allclose(h.data[t], expected, atol=1e-12)


def test_moe_forward_records_window():
    cfg = MoeLayerConfig(d=6, n_experts=3, segments=2, top_k=1, n_shared=1, ffn_inner=8)
    experts = MoeExperts.init(cfg, 0)
    state = RouterState.init(cfg, 0, std=0.5)
    u = Tensor(np.random.default_rng(0).standard_normal((9, 6)))
    moe_forward(u, experts, state, cfg)
    assert state.tokens == 9
    assert state.load_counts.sum() == 9 * cfg.k_routed
    assert ((state.mean_affinity() >= 0) & (state.mean_affinity() <= 1)).all()
    moe_forward(u, experts, state, cfg, record=False)
    assert state.tokens == 9
    state.reset_window()
    assert state.tokens == 0 and state.load_counts.sum() == 0


def test_moe_forward_edge_cases():
    cfg = MoeLayerConfig(d=6, n_experts=3, segments=2, top_k=1, n_shared=1, ffn_inner=8)
    experts = MoeExperts.init(cfg, 0)
    state = RouterState.init(cfg, 0)
    h, aux = moe_forward(Tensor(np.zeros((0, 6))), experts, state, cfg)
    assert h.shape == (0, 6) and aux.item() == 0.0
    with pytest.raises(DimensionError):
        moe_forward(Tensor(np.zeros((2, 5))), experts, state, cfg)
    loss_free = cfg.model_copy(update={"routing_mode": "loss_free"})
    _, aux = moe_forward(Tensor(np.ones((2, 6))), experts, state, loss_free)
    assert aux.item() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_gradients_through_selected_gates(seed):
    cfg = MoeLayerConfig(d=3, n_experts=2, segments=1, top_k=1, n_shared=0, ffn_inner=4, alpha=0.1)
    experts = MoeExperts.init(cfg, seed, std=0.5)
    state = RouterState.init(cfg, seed, std=0.8)
    rng = np.random.default_rng(seed)
    u = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    cotangent = rng.standard_normal((4, 3))

    def loss():
        h, aux = moe_forward(u, experts, state, cfg, record=False)
        return sum_(mul(h, cotangent)) + aux

    params = {"u": u, "centroids": state.centroids, **experts.parameters()}
    errors = gradcheck(loss, params)
    assert max(errors.values()) < 1e-4, errors


def test_unselected_expert_gets_no_gradient():
    cfg = scalar_config(2)
    experts = MoeExperts.init(cfg, 0, std=0.5)
    state = fixed_router(np.log([0.8, 0.2]))
    h, _ = moe_forward(Tensor([[1.0]]), experts, state, cfg, record=False)
    backward(sum_(h))
    assert experts.routed[0].w_in.grad is not None
    assert experts.routed[1].w_in.grad is None
    assert experts.routed[1].w_out.grad is None


# -- balance loss --------------------------------------------------------

def test_uniform_load_gives_alpha_k():
    n, k, alpha = 8, 2, 0.01
    loss = balance_loss(np.ones(n), np.full(n, k / n), alpha)
    assert abs(loss.item() - alpha * k) < 1e-12


def test_uniform_affinity_hides_skewed_load():
    n, k, alpha, T = 8, 2, 0.01, 10
    mask = np.zeros((T, n))
    mask[:, :k] = 1.0
    f = load_fractions(mask, k)
    np.testing.assert_array_equal(f, [4, 4, 0, 0, 0, 0, 0, 0])
    loss = balance_loss(f, np.full(n, k / n), alpha)
    assert abs(loss.item() - alpha * k) < 1e-12


def test_zero_alpha_and_empty_window():
    f = np.array([3.0, 0.0, 1.0])
    assert balance_loss(f, np.array([0.7, 0.1, 0.2]), 0.0).item() == 0.0
    with pytest.raises(ContractError):
        load_fractions(np.zeros((0, 3)), 1)
    with pytest.raises(DimensionError):
        balance_loss(np.ones(3), np.ones(4), 0.1)


def test_balance_gradient_flows_through_affinities():
    scores = Tensor(np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1]]), requires_grad=True)
    mask = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    backward(expert_balance_loss(mask, scores, 0.5, 1))
    f = load_fractions(mask, 1)
    np.testing.assert_allclose(scores.grad, np.tile(0.5 * f / 2, (2, 1)))


def test_load_statistics():
    assert load_ratio(np.array([3, 1])) == 1.5
    summary = load_summary(np.array([6, 2, 0, 0]))
    assert summary["tokens_routed"] == 8
    assert summary["load_max"] == 0.75
    assert summary["max_over_mean"] == 3.0
    with pytest.raises(ContractError):
        load_ratio(np.zeros(3))


# -- bias updates ----------------------------------------------------------

def test_bias_update_examples():
    state = fixed_router([0.0, 0.0], mode="loss_free")
    bias_update(state, np.array([5, 5]), 0.01)
    np.testing.assert_array_equal(state.bias, [0.0, 0.0])
    bias_update(state, np.array([10, 0]), 0.01)
    np.testing.assert_allclose(state.bias, [-0.01, 0.01])
    assert len(state.history) == 2


def test_bias_update_contract():
    state = fixed_router([0.0, 0.0], mode="loss_free")
    with pytest.raises(ConfigError):
        bias_update(state, np.array([1, 0]), -0.01)
    with pytest.raises(DimensionError):
        bias_update(state, np.array([1, 0, 0]), 0.01)
    frozen = fixed_router([0.0, 0.0])
    bias_update(frozen, np.array([10, 0]), 0.01)
    np.testing.assert_array_equal(frozen.bias, [0.0, 0.0])


def test_overloaded_expert_bias_falls_until_it_sheds_load():
    rng = np.random.default_rng(0)
    state = skewed_router(SKEWED)
    first_load = None
    for _ in range(200):
        loads = batch_loads(skewed_tokens(rng, 256), state, SKEWED)
        first_load = loads[0] if first_load is None else first_load
        before = state.bias[0]
        bias_update(state, loads, SKEWED.gamma)
        if loads[0] > loads.mean():
            assert state.bias[0] == pytest.approx(before - SKEWED.gamma)
    trajectory = [b[0] for b in state.history]
    assert trajectory[0] < 0
    assert min(trajectory) < -0.05
    final = batch_loads(skewed_tokens(rng, 256), state, SKEWED)
    assert final[0] < first_load


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_free_routing_halves_load_ratio(seed):
    rng = np.random.default_rng(seed)
    state = skewed_router(SKEWED)
    frozen = skewed_router(SKEWED)
    for _ in range(200):
        loads = batch_loads(skewed_tokens(rng, 512), state, SKEWED)
        bias_update(state, loads, SKEWED.gamma)

    held_out = skewed_tokens(np.random.default_rng(100 + seed), 2048)
    balanced = load_ratio(batch_loads(held_out, state, SKEWED))
    skewed = load_ratio(batch_loads(held_out, frozen, SKEWED))
    assert balanced <= 0.5 * skewed, (balanced, skewed)


def test_balance_loss_training_reduces_load_ratio():
    cfg = SKEWED.model_copy(update={"routing_mode": "aux_loss", "alpha": 1.0})
    experts = MoeExperts.init(cfg, 0)
    trained, untrained = skewed_router(cfg), skewed_router(cfg)
    optimizer = Optimizer(OptimizerConfig(lr=0.01, warmup_steps=0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        _, aux = moe_forward(Tensor(skewed_tokens(rng, 256)), experts, trained, cfg, record=False)
        backward(aux)
        optimizer.step({"centroids": trained.centroids})

    held_out = skewed_tokens(np.random.default_rng(7), 2048)
    assert load_ratio(batch_loads(held_out, trained, cfg)) < load_ratio(batch_loads(held_out, untrained, cfg))
