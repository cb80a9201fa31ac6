#!/usr/bin/env python
"""
Tests for the multi-token prediction chain and its averaged cross-entropy loss
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.append(str(Path(__file__).parent))

from attention import AttentionConfig
from layers import BlockConfig, Embedding, OutputHead
from moe import MoeLayerConfig
from mtp import MtpConfig, build_mtp_modules, mtp_depth_losses, mtp_forward, mtp_loss
from tensor_core import ConfigError, ContractError, Tensor, backward, gradcheck

V, D_MODEL = 5, 4

BLOCK = BlockConfig(
    attention=AttentionConfig(d=D_MODEL, n_h=2, d_h=2, d_c=2, d_c_q=2, d_h_r=2, l=1),
    ffn="dense",
    moe=MoeLayerConfig(d=D_MODEL, n_experts=2, segments=1, top_k=1, n_shared=0, ffn_inner=4),
    dense_inner=6,
    init_std=0.5,
)


def build(depth: int, seed: int = 0, block_cfg: BlockConfig = BLOCK):
    """Shared embedding/head plus MTP modules with every zero-initialised matrix randomised"""
    embedding = Embedding.init(V, D_MODEL, seed, std=0.5)
    head = OutputHead.init(V, D_MODEL, seed, std=0.5)
    cfg = MtpConfig(depth=depth, lam=0.3)
    modules = build_mtp_modules(cfg, block_cfg, embedding, head, seed)
    rng = np.random.default_rng(seed)
    for module in modules:
        for param in module.parameters().values():
            if not param.data.any():
                param.data[...] = rng.normal(0.0, 0.5, param.shape)
    return embedding, head, modules, cfg


def rms(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + 1e-6) * weight


def log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - math.log(np.exp(shifted).sum())


def test_depth_zero_is_a_no_op():
    embedding, head, modules, _ = build(0)
    cfg = MtpConfig(depth=0)
    assert modules == []
    assert mtp_forward(Tensor(np.zeros((3, D_MODEL))), [0, 1, 2, 3], modules, cfg, BLOCK) == []
    assert mtp_loss([], [0, 1, 2, 3], cfg).item() == 0.0


def test_modules_share_embedding_and_head():
    embedding, head, modules, _ = build(3)
    assert [m.depth for m in modules] == [1, 2, 3]
    for module in modules:
        assert module.embedding is embedding
        assert module.head is head
        assert not any(p is head.weight or p is embedding.weight for p in module.parameters().values())


def test_single_depth_matches_straight_line_oracle():
    embedding, head, modules, cfg = build(1, seed=3)
    module = modules[0]
    main = np.random.default_rng(3).standard_normal((3, D_MODEL))
    tokens = np.array([4, 0, 2, 3])

    logits = mtp_forward(Tensor(main), tokens, modules, cfg, BLOCK)
    assert len(logits) == 1 and logits[0].shape == (2, V)

    hidden = rms(main[0:2], module.hidden_norm.weight.data)
    embedded = rms(embedding.weight.data[tokens[1:3]], module.embed_norm.weight.data)
    merged = np.concatenate([hidden, embedded], axis=1) @ module.projection.data.T
    current = module.block.forward(Tensor(merged), 2, BLOCK, record=False)[0].data
    expected = rms(current, head.norm.weight.data) @ head.weight.data.T
    np.testing.assert_allclose(logits[0].data, expected, rtol=1e-10, atol=1e-12)


def test_uniform_predictor_closed_form():
    T, k = 8, 1
    tokens = np.random.default_rng(0).integers(0, V, size=T + 1)
    losses = mtp_depth_losses([Tensor(np.zeros((T - k, V)))], tokens)
    assert losses[0].item() == pytest.approx((T - k) / T * math.log(V), abs=1e-12)


def test_loss_matches_direct_summation():
    rng = np.random.default_rng(11)
    T, depth, lam = 6, 2, 0.3
    tokens = rng.integers(0, V, size=T + 1)
    logits = [rng.standard_normal((T - k, V)) for k in range(1, depth + 1)]

    expected = 0.0
    for k, rows in enumerate(logits, start=1):
        depth_loss = 0.0
        for p in range(T - k):
            depth_loss -= log_softmax(rows[p])[tokens[p + k + 1]]
        expected += depth_loss / T
    expected *= lam / depth

    loss = mtp_loss([Tensor(x) for x in logits], tokens, MtpConfig(depth=depth, lam=lam))
    assert abs(loss.item() - expected) < 1e-12


def test_lambda_scaling():
    rng = np.random.default_rng(1)
    tokens = rng.integers(0, V, size=7)
    logits = [Tensor(rng.standard_normal((5, V)))]
    base = mtp_loss(logits, tokens, MtpConfig(depth=1, lam=0.3)).item()
    assert base > 0
    assert mtp_loss(logits, tokens, MtpConfig(depth=1, lam=0.6)).item() == 2 * base
    assert mtp_loss(logits, tokens, MtpConfig(depth=1, lam=0.0)).item() == 0.0


def test_negative_lambda_rejected():
    with pytest.raises(ConfigError):
        mtp_loss([Tensor(np.zeros((2, V)))], [0, 1, 2, 3], MtpConfig.model_construct(depth=1, lam=-0.1))


def test_shape_contracts():
    embedding, head, modules, cfg = build(2)
    with pytest.raises(ContractError):
        mtp_forward(Tensor(np.zeros((2, D_MODEL))), [0, 1, 2], modules, cfg, BLOCK)
    with pytest.raises(ContractError):
        mtp_forward(Tensor(np.zeros((4, D_MODEL))), [0, 1, 2, 3, 4], modules[:1], cfg, BLOCK)
    with pytest.raises(ConfigError):
        build_mtp_modules(MtpConfig(depth=1, d=8), BLOCK, embedding, head, 0)
    with pytest.raises(ConfigError):
        build_mtp_modules(MtpConfig(depth=1, vocab_size=9), BLOCK, embedding, head, 0)


def test_causality_within_each_depth():
    _, _, modules, cfg = build(2, seed=5)
    main = np.random.default_rng(5).standard_normal((6, D_MODEL))
    tokens = np.array([1, 2, 3, 4, 0, 1, 2])
    base = mtp_forward(Tensor(main), tokens, modules, cfg, BLOCK)
    p = 4
    changed = tokens.copy()
    changed[p] = (changed[p] + 1) % V
    out = mtp_forward(Tensor(main), changed, modules, cfg, BLOCK)
    for k, (before, after) in enumerate(zip(base, out), start=1):
        first_affected = p - k
        np.testing.assert_array_equal(after.data[:first_affected], before.data[:first_affected])
        assert not np.allclose(after.data[first_affected], before.data[first_affected])


def test_later_depths_do_not_feed_earlier_ones():
    _, _, modules, cfg = build(2, seed=6)
    main = Tensor(np.random.default_rng(6).standard_normal((5, D_MODEL)))
    tokens = [0, 1, 2, 3, 4, 0]
    before = mtp_forward(main, tokens, modules, cfg, BLOCK)
    for param in modules[1].parameters().values():
        param.data += 0.3
    after = mtp_forward(main, tokens, modules, cfg, BLOCK)
    np.testing.assert_array_equal(after[0].data, before[0].data)
    assert not np.allclose(after[1].data, before[1].data)


def test_mtp_loss_alone_trains_shared_head_and_embedding():
    embedding, head, modules, cfg = build(2, seed=7)
    tokens = np.array([[0, 1, 2, 3, 4, 0], [4, 3, 2, 1, 0, 4]])
    main = Tensor(np.random.default_rng(7).standard_normal((2 * 5, D_MODEL)))
    backward(mtp_loss(mtp_forward(main, tokens, modules, cfg, BLOCK), tokens, cfg))
    assert head.weight.grad is not None and np.abs(head.weight.grad).sum() > 0
    assert embedding.weight.grad is not None and np.abs(embedding.weight.grad).sum() > 0
    assert modules[1].projection.grad is not None


def test_batched_sequences_average_per_sequence():
    _, _, modules, cfg = build(1, seed=8)
    tokens = np.array([[0, 1, 2, 3, 4], [2, 2, 1, 0, 3]])
    main = np.random.default_rng(8).standard_normal((8, D_MODEL))
    batched = mtp_loss(mtp_forward(Tensor(main), tokens, modules, cfg, BLOCK), tokens, cfg).item()
    singles = [
        mtp_loss(mtp_forward(Tensor(main[4 * b:4 * (b + 1)]), tokens[b], modules, cfg, BLOCK), tokens[b], cfg).item()
        for b in range(2)
    ]
    assert batched == pytest.approx(np.mean(singles), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_mtp_loss_gradients_match_finite_differences(seed):
    embedding, head, modules, cfg = build(2, seed=seed)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, V, size=6)
    main = Tensor(rng.standard_normal((5, D_MODEL)), requires_grad=True)
    params = {"main": main, **embedding.parameters("embedding."), **head.parameters("head.")}
    for module in modules:
        params.update(module.parameters(f"mtp{module.depth}."))
    errors = gradcheck(lambda: mtp_loss(mtp_forward(main, tokens, modules, cfg, BLOCK), tokens, cfg), params)
    assert max(errors.values()) < 1e-4, errors
