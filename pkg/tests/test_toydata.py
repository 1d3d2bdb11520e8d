import numpy as np
import pytest

from flowbox.toydata import (
    NUM_SPECIAL,
    SIL,
    AlignedCorpusConfig,
    CorpusFormatError,
    DescriptionVocab,
    MixtureSpec,
    NoEligiblePrompt,
    ToyGenerator,
    eight_gaussians,
    gen_aligned_corpus,
    gen_mixture,
    load_corpus,
    load_points,
    read_frames,
    save_corpus,
    save_points,
    select_voice_prompt,
    standard_normal,
    write_frames,
)


def test_standard_normal_moments():
    x = gen_mixture(standard_normal(2), 10_000, np.random.default_rng(0))
    assert np.abs(x.mean(0)).max() < 0.05
    assert np.abs(np.cov(x.T) - np.eye(2)).max() < 0.05


def test_zero_weight_component_never_drawn():
    spec = MixtureSpec(np.array([[0.0, 0.0], [50.0, 50.0]]), np.tile(np.eye(2), (2, 1, 1)), np.array([1.0, 0.0]))
    _, lab = gen_mixture(spec, 2000, np.random.default_rng(1), return_labels=True)
    assert (lab == 0).all()


def test_non_pd_covariance_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        MixtureSpec(np.zeros((1, 2)), np.array([[[1.0, 2.0], [2.0, 1.0]]]), np.array([1.0]))


def test_mixture_seed_reproducible():
    a = gen_mixture(eight_gaussians(), 100, np.random.default_rng(5))
    b = gen_mixture(eight_gaussians(), 100, np.random.default_rng(5))
    assert a.tobytes() == b.tobytes()


def test_log_density_matches_moment_formula():
    spec = eight_gaussians()
    x = gen_mixture(spec, 200_000, np.random.default_rng(2))
    assert np.abs(x.mean(0) - spec.mean()).max() < 0.02
    assert np.abs(np.cov(x.T) - spec.covariance()).max() < 0.03
    # density integrates to ~1 on a grid
    g = np.linspace(-4, 4, 201)
    xx, yy = np.meshgrid(g, g)
    p = np.exp(spec.log_density(np.stack([xx.ravel(), yy.ravel()], 1)))
    assert abs(p.sum() * (g[1] - g[0]) ** 2 - 1.0) < 1e-3


def _cfg(**kw):
    return AlignedCorpusConfig(n_utterances=kw.pop("n", 60), **kw)


def test_corpus_invariants():
    split = gen_aligned_corpus(_cfg(sound_fraction=0.3))
    ids = [u.uid for u in split.all()]
    assert len(ids) == len(set(ids)) == 60
    for u in split.all():
        assert u.durations.sum() == u.num_frames == len(u.frame_tokens())
        assert u.frames.shape == (u.num_frames, 8)
        assert len(u.description) == 4


def test_corpus_regeneration_is_byte_identical(tmp_path):
    a = gen_aligned_corpus(_cfg(seed=4))
    b = gen_aligned_corpus(_cfg(seed=4))
    save_corpus(a, _cfg(seed=4), tmp_path / "a")
    save_corpus(b, _cfg(seed=4), tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_zero_noise_gives_templates():
    cfg = _cfg(noise_sigma={"clean": 0.0, "noisy": 0.0})
    gen = ToyGenerator(cfg)
    for u in gen_aligned_corpus(cfg).all():
        np.testing.assert_array_equal(u.frames, gen.mean_frames(u.tokens, u.durations, u.style, u.labels, u.kind))


def test_fast_tokens_shorter_than_slow():
    gen = ToyGenerator(_cfg(duration_jitter=0))
    rng = np.random.default_rng(0)
    toks = np.array([SIL, 5, 6, 7, SIL])
    fast = gen.sample_durations(toks, "fast", rng)
    slow = gen.sample_durations(toks, "slow", rng)
    assert (fast[1:-1] < slow[1:-1]).all()


def test_per_token_mean_within_monte_carlo_bound():
    cfg = _cfg()
    gen = ToyGenerator(cfg)
    labels = {"rate": "normal", "pitch": "high", "noise": "noisy"}
    toks, d = np.array([SIL, NUM_SPECIAL + 3, SIL]), np.array([1, 4, 1])
    n = 1000
    draws = gen.sample_frames(toks, d, 2, labels, np.random.default_rng(3), n=n)
    mean = gen.mean_frames(toks, d, 2, labels)
    bound = 3 * 0.25 / np.sqrt(n)
    assert np.abs(draws.mean(0) - mean).max() < bound * 1.5  # max over 48 coordinates


def test_voice_prompt_contract():
    split = gen_aligned_corpus(_cfg(n=200))
    rng = np.random.default_rng(0)
    for target in split.train[:20]:
        p = select_voice_prompt(split.train, target, rng)
        assert p.style == target.style and p.uid != target.uid
        assert p.attribute_vector() != target.attribute_vector()


def test_voice_prompt_no_eligible():
    cfg = _cfg(n=5)
    gen = ToyGenerator(cfg)
    rng = np.random.default_rng(0)
    lab = {"rate": "slow", "pitch": "low", "noise": "clean"}
    pool = [gen.make_utterance(f"u{i}", rng, style=1, labels=lab, kind="speech") for i in range(4)]
    with pytest.raises(NoEligiblePrompt, match="style 1"):
        select_voice_prompt(pool, pool[0], rng)


def test_description_vocab_roundtrip():
    v = DescriptionVocab(5)
    ids = v.encode(3, {"rate": "fast", "pitch": "low", "noise": "clean"})
    assert v.decode(ids) == ["style-3", "rate-fast", "pitch-low", "noise-clean"]
    assert len(v) == 1 + 5 + 4 + 3 + 2


def test_frame_file_roundtrip_and_bad_magic(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 8))
    write_frames(tmp_path / "f.bin", x)
    assert read_frames(tmp_path / "f.bin").tobytes() == x.tobytes()
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"FBX1"
    (tmp_path / "g.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CorpusFormatError):
        read_frames(tmp_path / "g.bin")


def test_corpus_load_roundtrip(tmp_path):
    cfg = _cfg(n=20, sound_fraction=0.5)
    split = gen_aligned_corpus(cfg)
    save_corpus(split, cfg, tmp_path)
    back, cfg2 = load_corpus(tmp_path)
    assert cfg2 == cfg
    for a, b in zip(split.all(), back.all()):
        assert a.uid == b.uid and a.kind == b.kind and a.labels == b.labels
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.durations, b.durations)


def test_points_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(50, 2))
    save_points(tmp_path / "p.txt", x)
    assert load_points(tmp_path / "p.txt").tobytes() == x.tobytes()
