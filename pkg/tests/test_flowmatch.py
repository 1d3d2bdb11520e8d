import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbox import diffcore as dc
from flowbox.flowmatch import (
    SOUND_WEIGHT,
    SPEECH_WEIGHT,
    AudioFlowModel,
    AudioModelConfig,
    CFGConfig,
    ConditionBundle,
    DropoutPolicy,
    DurationModel,
    DurationModelConfig,
    EmptyMaskWarning,
    FeatureSequence,
    MaskSpec,
    OTPathConfig,
    assemble_speech_conditioning,
    average_durations,
    build_pseudo_transcript,
    cfg_field,
    collate,
    empty_caption,
    finetune_mask_spec,
    fm_masked_loss,
    generate_infill,
    masked_mse,
    ot_interpolate,
    pad_silence,
    pretrain_mask_spec,
    pseudo_voice_prompt,
    sample_condition_dropout,
    sample_durations,
    sample_mask,
    sample_masks,
    trim_silence,
)
from flowbox.netlib import TransformerConfig
from flowbox.odesolve import SolverConfig
from flowbox.toydata import SIL, SOUND

TINY = TransformerConfig(layers=2, heads=2, embed_dim=8, ffn_dim=16)


# -- OT path -------------------------------------------------------------------

def test_ot_hand_example():
    x_t, v = ot_interpolate(np.array([1.0]), np.array([2.0]), 0.5, OTPathConfig(0.0))
    assert x_t[0] == 1.5 and v[0] == 1.0


@given(st.integers(0, 10_000), st.floats(1e-6, 0.5))
@settings(max_examples=30, deadline=None)
def test_ot_endpoints_and_straightness(seed, sigma):
    rng = np.random.default_rng(seed)
    x0, x1 = rng.normal(size=(2, 3, 4))
    cfg = OTPathConfig(sigma)
    a, _ = ot_interpolate(x0, x1, 0.0, cfg)
    b, _ = ot_interpolate(x0, x1, 1.0, cfg)
    assert np.abs(a - x0).max() <= 1e-12
    assert np.abs(b - (sigma * x0 + x1)).max() <= 1e-12
    vs = [ot_interpolate(x0, x1, t, cfg)[1] for t in (0.0, 0.2, 0.5, 0.9, 1.0)]
    assert max(np.abs(v - vs[0]).max() for v in vs) <= 1e-12


def test_ot_per_example_time_and_errors():
    x0, x1 = np.zeros((2, 3)), np.ones((2, 3))
    x_t, _ = ot_interpolate(x0, x1, np.array([0.0, 1.0]), OTPathConfig(0.0))
    np.testing.assert_array_equal(x_t, [[0, 0, 0], [1, 1, 1]])
    with pytest.raises(dc.ShapeError):
        ot_interpolate(np.zeros(3), np.zeros(4), 0.5)
    with pytest.raises(ValueError):
        OTPathConfig(1.0)


# -- masked loss -----------------------------------------------------------------

def test_masked_mse_single_frame():
    pred = dc.Parameter(np.zeros((1, 3, 2)), name="p")
    target = np.zeros((1, 3, 2))
    target[0, 1] = [3.0, 4.0]
    mask = np.array([[False, True, False]])
    assert float(masked_mse(pred, target, mask).data) == 12.5


def test_masked_loss_zero_on_unmasked_and_exact_match():
    rng = np.random.default_rng(0)
    target = rng.normal(size=(2, 5, 3))
    mask = rng.uniform(size=(2, 5)) < 0.5
    mask[0, 0] = True
    pred = dc.Parameter(np.where(mask[..., None], target, rng.normal(size=target.shape)), name="p")
    loss = masked_mse(pred, target, mask)
    assert float(loss.data) == 0.0
    pred.data += rng.normal(size=target.shape)
    loss = masked_mse(pred, target, mask)
    dc.backprop(loss, [pred])
    assert np.all(pred.grad[~mask] == 0.0)
    assert np.any(pred.grad[mask] != 0.0)


def test_empty_mask_warns_and_returns_zero():
    pred = dc.Parameter(np.ones((1, 4, 2)), name="p")
    with pytest.warns(EmptyMaskWarning):
        loss = masked_mse(pred, np.zeros((1, 4, 2)), np.zeros((1, 4), bool))
    assert float(loss.data) == 0.0


def _tiny_model(seed=0, **kw):
    kw.setdefault("token_vocab", 18)
    return AudioFlowModel(AudioModelConfig(feat_dim=3, transformer=TINY, zero_out=False, **kw),
                          np.random.default_rng(seed))


def _bundle(rng, T=6, C=3, desc=False, vp=False):
    mask = np.zeros(T, bool)
    mask[2:5] = True
    frames = rng.normal(size=(T, C))
    return ConditionBundle(rng.integers(2, 18, size=T), FeatureSequence(frames, mask),
                           np.array([1, 6, 10, 13]) if desc else None,
                           rng.normal(size=(4, C)) if vp else None)


def test_fm_masked_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    model = _tiny_model(desc_vocab=15, voice_prompt=True, vp_layers=1)
    bundles = [_bundle(rng, desc=True, vp=True), _bundle(rng, T=4, desc=True, vp=True)]
    cond, gen = collate(bundles)
    x1 = np.stack([np.pad(b.context.frames, ((0, 6 - b.context.T), (0, 0))) for b in bundles])
    params = [p for _, p in model.named_parameters()][::7][:10]

    def loss():
        return fm_masked_loss(lambda x, t: model(x, t, cond), x1, gen, np.random.default_rng(5))

    assert dc.finite_diff_check(loss, params, eps=1e-3) < 1e-4


# -- masks ---------------------------------------------------------------------

def test_full_fraction_masks_everything():
    spec = MaskSpec(0.0, 1.0, 1.0, 10)
    assert sample_mask(37, spec, np.random.default_rng(0)).all()


def test_short_sequence_masked_whole():
    assert sample_mask(5, pretrain_mask_spec(), np.random.default_rng(0)).all()


def _runs(mask):
    runs, n = [], 0
    for m in mask:
        if m:
            n += 1
        elif n:
            runs.append(n)
            n = 0
    return runs + ([n] if n else [])


def test_pretrain_mask_property_many_draws():
    spec = MaskSpec(0.0, 0.7, 1.0, 10)
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        m = sample_mask(100, spec, rng)
        assert 70 <= m.sum() <= 100
        assert min(_runs(m)) >= 10


def test_finetune_mask_is_one_chunk():
    rng = np.random.default_rng(1)
    spec = finetune_mask_spec()
    full = 0
    for _ in range(2000):
        m = sample_mask(40, spec, rng)
        assert len(_runs(m)) == 1
        full += m.all()
        if not m.all():
            assert 28 <= m.sum() <= 40
    assert 0.25 < full / 2000 < 0.4  # p_full=0.3 plus f=1 hits


def test_pretrain_full_mask_rate():
    rng = np.random.default_rng(2)
    spec = MaskSpec(0.1, 0.0, 0.0, 1)
    hits = sum(sample_mask(50, spec, rng).all() for _ in range(20_000))
    assert abs(hits / 20_000 - 0.1) < 0.01


def test_sample_masks_padding_false():
    m = sample_masks([3, 7], pretrain_mask_spec(), np.random.default_rng(0))
    assert m.shape == (2, 7) and not m[0, 3:].any()


# -- conditioning --------------------------------------------------------------

def test_assemble_length_and_permutation():
    rng = np.random.default_rng(0)
    model = _tiny_model()
    x_t, ctx = rng.normal(size=(2, 1, 5, 3))
    tok = rng.integers(2, 18, size=(1, 5))
    out = assemble_speech_conditioning(model, x_t, ctx, tok, 0.3)
    assert out.shape == (1, 6, 8)
    perm = np.array([0, 3, 2, 1, 4])
    h = model.hidden_input(x_t, ctx, tok).data
    hp = model.hidden_input(x_t[:, perm], ctx[:, perm], tok[:, perm]).data
    np.testing.assert_array_equal(hp, h[:, perm])
    with pytest.raises(dc.ShapeError):
        model.hidden_input(x_t, ctx, tok[:, :4])


def test_zero_context_and_zero_token_embedding_isolates_x_path():
    rng = np.random.default_rng(0)
    model = _tiny_model()
    model.tok_emb.weight.data[:] = 0.0
    x_t = rng.normal(size=(1, 5, 3))
    a = model.hidden_input(x_t, np.zeros_like(x_t), rng.integers(2, 18, size=(1, 5))).data
    b = model.hidden_input(x_t, np.zeros_like(x_t), rng.integers(2, 18, size=(1, 5))).data
    np.testing.assert_array_equal(a, b)


def test_context_frames_zeroed_where_masked():
    seq = FeatureSequence(np.ones((4, 2)), np.array([True, False, True, False]))
    np.testing.assert_array_equal(seq.context()[:, 0], [0, 1, 0, 1])


def test_token_alignment_enforced():
    with pytest.raises(ValueError, match="alignment"):
        ConditionBundle(np.zeros(3), FeatureSequence(np.zeros((4, 2)), np.zeros(4, bool)))


def test_bundle_flags_and_pseudo_forms():
    rng = np.random.default_rng(0)
    b = _bundle(rng, desc=True, vp=True)
    assert b.has_ctx and b.has_vp and b.has_cap
    u = b.unconditional()
    assert not (u.has_ctx or u.has_vp or u.has_cap)
    assert u.voice_prompt.shape == (1, 3) and not u.voice_prompt.any()
    np.testing.assert_array_equal(u.description, empty_caption())
    assert u.context.mask.all()
    np.testing.assert_array_equal(pseudo_voice_prompt(8), np.zeros((1, 8)))


# -- guidance ------------------------------------------------------------------

def test_cfg_field_examples():
    assert cfg_field(np.array([2.0]), np.array([1.0]), 0.7)[0] == pytest.approx(2.7, abs=1e-15)
    u = np.random.default_rng(0).normal(size=5)
    np.testing.assert_array_equal(cfg_field(u, u * 3, 0.0), u)
    np.testing.assert_allclose(cfg_field(u, u, 4.2), u, rtol=0, atol=1e-14)
    with pytest.raises(dc.ShapeError):
        cfg_field(np.zeros(2), np.zeros(3), 1.0)
    assert (SPEECH_WEIGHT, SOUND_WEIGHT) == (0.7, 1.0)
    with pytest.raises(ValueError):
        CFGConfig(-0.1)


@given(st.floats(0, 5), st.floats(0, 5))
@settings(max_examples=30, deadline=None)
def test_cfg_field_affine_in_w(w1, w2):
    rng = np.random.default_rng(0)
    uc, uu = rng.normal(size=(2, 4))
    lam = 0.3
    mix = cfg_field(uc, uu, lam * w1 + (1 - lam) * w2)
    np.testing.assert_allclose(mix, lam * cfg_field(uc, uu, w1) + (1 - lam) * cfg_field(uc, uu, w2), atol=1e-12)


# -- dropout -------------------------------------------------------------------

def test_dropout_table_values():
    j = DropoutPolicy().joint()
    assert j[(True, False, False)] == pytest.approx(0.075)
    assert j[(False, True, True)] == pytest.approx(0.245)
    assert j[(True, True, True)] == pytest.approx(0.105)
    assert sum(j.values()) == pytest.approx(1.0)


def test_dropout_chi_square():
    from scipy.stats import chisquare

    policy = DropoutPolicy()
    c, v, p = sample_condition_dropout(policy, np.random.default_rng(0), n=1_000_000)
    keys = list(policy.joint())
    obs = [np.sum((c == k[0]) & (v == k[1]) & (p == k[2])) for k in keys]
    exp = [policy.joint()[k] * 1_000_000 for k in keys]
    assert chisquare(obs, exp).pvalue > 0.01


def test_single_draw_returns_bools():
    out = sample_condition_dropout(DropoutPolicy(), np.random.default_rng(0))
    assert all(isinstance(x, bool) for x in out)


# -- pseudo transcript and silence -----------------------------------------------

def test_pseudo_transcript():
    tok, d = build_pseudo_transcript(2.5, 10)
    np.testing.assert_array_equal(d, [10, 10, 5])
    assert (tok == SOUND).all()
    tok, d = build_pseudo_transcript(10.0, 10)
    assert len(tok) == 10 and d.sum() == 100
    with pytest.raises(ValueError):
        build_pseudo_transcript(0.0)


class _ZeroRng:
    def uniform(self, lo, hi, size=None):
        return np.zeros(size)


def test_pad_silence_zero_and_range():
    tok, d = pad_silence([5, 6], [3, 4], _ZeroRng())
    np.testing.assert_array_equal(tok, [SIL, 5, 6, SIL])
    np.testing.assert_array_equal(d, [0, 3, 4, 0])
    rng = np.random.default_rng(0)
    for _ in range(200):
        tok, d = pad_silence([5], [2], rng)
        assert 0 <= d[0] <= 30 and 0 <= d[-1] <= 30
        assert d.sum() == 2 + d[0] + d[-1]


def test_trim_silence_caps_edges():
    np.testing.assert_array_equal(trim_silence([SIL, 5, SIL], [7, 3, 4]), [1, 3, 1])
    np.testing.assert_array_equal(trim_silence([5, 6], [7, 3]), [7, 3])


# -- durations -----------------------------------------------------------------

def test_average_of_identical_draws_is_that_draw():
    d = np.array([[1.0, 2.5, 0.0]] * 5)
    np.testing.assert_array_equal(average_durations(d), d[0])
    assert (average_durations(-np.ones((3, 4))) == 0).all()


def test_sample_durations_nonnegative_and_errors():
    model = DurationModel(DurationModelConfig(transformer=TINY), np.random.default_rng(0))
    d = sample_durations(model, np.array([SIL, 5, 6, SIL]), np.random.default_rng(0))
    assert d.dtype == np.int64 and (d >= 0).all() and len(d) == 4
    with pytest.raises(ValueError):
        sample_durations(model, np.array([], dtype=np.int64), np.random.default_rng(0))


# -- infilling -----------------------------------------------------------------

def test_infill_preserves_context_bitwise():
    rng = np.random.default_rng(3)
    model = _tiny_model()
    b = _bundle(rng)
    out = generate_infill(model, b, SolverConfig("midpoint", 0.25), CFGConfig(0.7), rng, num_samples=4)
    keep = ~b.context.mask
    assert (out[:, keep] == b.context.frames[keep]).all()
    assert not np.array_equal(out[0, b.context.mask], out[1, b.context.mask])


def test_infill_all_false_mask_returns_context():
    rng = np.random.default_rng(4)
    b = _bundle(rng)
    b = ConditionBundle(b.tokens, FeatureSequence(b.context.frames, np.zeros(6, bool)))
    out = generate_infill(_tiny_model(), b, SolverConfig("euler", 0.5), None, rng)
    assert out.frames.tobytes() == b.context.frames.tobytes()


def test_infill_empty_mask_warning_not_raised_by_generation():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        test_infill_all_false_mask_returns_context()
