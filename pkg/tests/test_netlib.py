import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbox import diffcore as dc
from flowbox.netlib import (
    Transformer,
    TransformerConfig,
    VoicePromptEncoder,
    VoicePromptEncoderConfig,
    alibi_bias,
    lora_wrap,
    sinusoidal_embed,
)


def small_cfg(**kw):
    base = dict(layers=4, heads=4, embed_dim=16, ffn_dim=32)
    base.update(kw)
    return TransformerConfig(**base)


def build(cfg, seed=0):
    model = Transformer(cfg, np.random.default_rng(seed))
    model.assign_names()
    return model


# -- ALiBi --------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 256), st.integers(1, 16))
def test_alibi_symmetric_zero_diagonal(T, heads):
    b = alibi_bias(T, heads).bias
    assert b.shape == (heads, T, T)
    assert np.all(np.diagonal(b, axis1=1, axis2=2) == 0)
    np.testing.assert_array_equal(b, np.swapaxes(b, 1, 2))


def test_alibi_first_head_slope_eight_heads():
    b = alibi_bias(5, 8).bias
    assert b[0, 2, 3] == -0.5
    assert b[0, 0, 4] == -2.0


def test_alibi_random_pairs_symmetric():
    rng = np.random.default_rng(0)
    b = alibi_bias(40, 4).bias
    for _ in range(50):
        h, i, j = rng.integers(4), rng.integers(40), rng.integers(40)
        assert b[h, i, j] == b[h, j, i]


# -- sinusoidal embedding --------------------------------------------------------


def test_sinusoidal_at_zero():
    e = sinusoidal_embed(0.0, 16).data
    np.testing.assert_array_equal(e[:8], 0.0)
    np.testing.assert_array_equal(e[8:], 1.0)


def test_sinusoidal_range_and_odd_dim():
    e = sinusoidal_embed(np.linspace(0, 1, 50), 32).data
    assert np.all(np.abs(e) <= 1.0)
    with pytest.raises(ValueError):
        sinusoidal_embed(0.5, 7)


def test_sinusoidal_distinct_on_inference_grid():
    grid = np.linspace(0.0, 1.0, 33)
    e = sinusoidal_embed(grid, 64).data
    d = np.linalg.norm(e[:, None] - e[None], axis=-1)
    assert np.all(d[~np.eye(33, dtype=bool)] > 1e-6)


def test_sinusoidal_differentiable_in_t():
    t = dc.Tensor(np.array([0.3, 0.71]), requires_grad=True)
    w = np.random.default_rng(1).normal(size=(2, 8))
    err = dc.finite_diff_check(lambda: (sinusoidal_embed(t, 8, scale=3.0) * w).sum(), [t])
    assert err < 1e-4


# -- transformer ----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        TransformerConfig(embed_dim=30, heads=4)
    with pytest.raises(ValueError):
        TransformerConfig(layers=3, use_unet_skips=True)


def test_forward_shape_and_finite_with_zero_head():
    model = build(small_cfg())
    x = np.random.default_rng(2).normal(size=(7, 16))
    out = model(x, time_embed=sinusoidal_embed(0.4, 16))
    assert out.shape == (7, 16)
    assert out.is_finite()


def test_doubling_length_doubles_output():
    model = build(small_cfg())
    rng = np.random.default_rng(3)
    te = sinusoidal_embed(0.2, 16)
    assert model(rng.normal(size=(5, 16)), te).shape[0] == 5
    assert model(rng.normal(size=(10, 16)), te).shape[0] == 10


def test_cross_context_rejected_when_disabled():
    model = build(small_cfg())
    with pytest.raises(ValueError):
        model(np.zeros((3, 16)), cross_context=np.zeros((2, 16)))


def test_cross_attention_permutation_invariant():
    model = build(small_cfg(cross_attention=True), seed=5)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 6, 16))
    ctx = rng.normal(size=(2, 5, 16))
    perm = rng.permutation(5)
    a = model(x, sinusoidal_embed(np.array([0.1, 0.9]), 16), cross_context=ctx).data
    b = model(x, sinusoidal_embed(np.array([0.1, 0.9]), 16), cross_context=ctx[:, perm]).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_cross_attention_changes_output():
    model = build(small_cfg(cross_attention=True), seed=5)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 6, 16))
    a = model(x, cross_context=rng.normal(size=(1, 4, 16))).data
    b = model(x, cross_context=rng.normal(size=(1, 4, 16))).data
    assert np.abs(a - b).max() > 1e-6


def test_identity_skips_equal_no_skip_network():
    with_skips = build(small_cfg(use_unet_skips=True), seed=9)
    without = build(small_cfg(use_unet_skips=False), seed=9)
    # same layer weights, only the skip maps differ
    without.load_state_dict({k: v for k, v in with_skips.state_dict().items()
                             if not k.startswith("skips")})
    with_skips.init_skips_identity()
    x = np.random.default_rng(10).normal(size=(3, 8, 16))
    te = sinusoidal_embed(np.array([0.0, 0.5, 1.0]), 16)
    np.testing.assert_allclose(with_skips(x, te).data, without(x, te).data, atol=1e-12, rtol=0)


def test_key_mask_isolates_padding():
    model = build(small_cfg(), seed=12)
    rng = np.random.default_rng(13)
    x = rng.normal(size=(1, 6, 16))
    padded = np.concatenate([x, rng.normal(size=(1, 3, 16))], axis=1)
    mask = np.array([[True] * 6 + [False] * 3])
    a = model(x).data
    b = model(padded, key_mask=mask).data[:, :6]
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_gradient_reaches_every_parameter():
    model = build(small_cfg(cross_attention=True), seed=14)
    rng = np.random.default_rng(15)
    x = rng.normal(size=(2, 5, 16))
    out = model(x, sinusoidal_embed(np.array([0.3, 0.6]), 16), cross_context=rng.normal(size=(2, 3, 16)))
    grads = dc.backprop((out * rng.normal(size=out.shape)).sum(), model.parameters())
    for (name, _), g in zip(model.named_parameters(), grads):
        assert np.linalg.norm(g) > 0, name


def test_transformer_gradient_finite_differences():
    model = build(small_cfg(layers=2, embed_dim=8, heads=2, ffn_dim=8), seed=16)
    rng = np.random.default_rng(17)
    x = rng.normal(size=(1, 4, 8))
    w = rng.normal(size=(1, 4, 8))
    leaves = [p for n, p in model.named_parameters() if n.endswith("q.weight") or n.startswith("skips")]
    err = dc.finite_diff_check(lambda: (model(x, sinusoidal_embed(np.array([0.5]), 8)) * w).sum(), leaves)
    assert err < 1e-4


# -- voice prompt encoder ----------------------------------------------------------


def test_voice_prompt_encoder_pseudo_prompt_deterministic():
    enc = VoicePromptEncoder(8, VoicePromptEncoderConfig(embed_dim=16, ffn_dim=32), np.random.default_rng(0))
    pseudo = np.zeros((1, 8))
    a, b = enc(pseudo).data, enc(pseudo).data
    assert a.shape == (1, 16)
    np.testing.assert_array_equal(a, b)
    assert enc(np.zeros((7, 8))).shape == (7, 16)
    assert len(enc.body.layers) == 3


def test_voice_prompt_encoder_rejects_empty():
    enc = VoicePromptEncoder(8, VoicePromptEncoderConfig(embed_dim=16, ffn_dim=32), np.random.default_rng(0))
    with pytest.raises(ValueError):
        enc(np.zeros((0, 8)))


# -- LoRA -------------------------------------------------------------------------


def test_lora_at_init_is_exact():
    model = build(small_cfg(), seed=20)
    x = np.random.default_rng(21).normal(size=(2, 6, 16))
    te = sinusoidal_embed(np.array([0.2, 0.8]), 16)
    before = model(x, te).data
    lora_wrap(model, 4, np.random.default_rng(22))
    after = model(x, te).data
    assert np.max(np.abs(after - before)) == 0.0


def test_lora_trainable_count():
    cfg = small_cfg()
    model = build(cfg, seed=23)
    adapters = lora_wrap(model, 3, np.random.default_rng(0))
    D, r = cfg.embed_dim, 3
    assert len(adapters) == 3 * cfg.layers
    assert model.num_parameters(trainable_only=True) == len(adapters) * 2 * r * D
    model.ln_out.set_trainable(True)  # an explicitly unfrozen extra
    assert model.num_parameters(trainable_only=True) == len(adapters) * 2 * r * D + 2 * D


def test_lora_rank_too_large():
    model = build(small_cfg(), seed=24)
    with pytest.raises(ValueError):
        lora_wrap(model, 16, np.random.default_rng(0))


def test_lora_step_keeps_base_bitwise():
    model = build(small_cfg(), seed=25)
    base = model.state_dict()
    lora_wrap(model, 2, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 16))
    loss = dc.mse(model(x, sinusoidal_embed(np.array([0.1, 0.2]), 16)), rng.normal(size=(2, 5, 16)))
    dc.backprop(loss, model.parameters())
    state = dc.AdamState(lr=1e-2, warmup=0)
    dc.adam_step(model.parameters(), state)
    dc.backprop(dc.mse(model(x, sinusoidal_embed(np.array([0.1, 0.2]), 16)), np.zeros((2, 5, 16))),
                model.parameters())
    dc.adam_step(model.parameters(), state)
    after = model.state_dict()
    for k, v in base.items():
        assert np.array_equal(after[k], v), k
    assert any(np.abs(after[k]).sum() > 0 for k in after if k.endswith("lora_B"))
