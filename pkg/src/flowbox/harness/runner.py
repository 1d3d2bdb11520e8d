"""Executes one run per config: train or evaluate, then write checkpoint, metrics and plots."""

from __future__ import annotations

import json
import logging
from dataclasses import fields
from pathlib import Path

import numpy as np

from flowbox import diffcore as dc
from flowbox.bespoke import BespokeConfig, BespokeParams, bespoke_sample, end_state_rmse, generate_gt, train_bespoke
from flowbox.flowmatch import (
    AudioModelConfig,
    AudioFlowModel,
    CFGConfig,
    DropoutPolicy,
    DurationModel,
    DurationModelConfig,
    MaskSpec,
    bundle_from_utterance,
    finetune_mask_spec,
    generate_infill,
    pretrain_mask_spec,
    sample_mask,
)
from flowbox.jointembed import (
    JointEmbedConfig,
    JointEmbedder,
    JointTrainConfig,
    embed_utterances,
    retrieval_metrics,
    train_joint_embedder,
    unique_by_description,
)
from flowbox.netlib import VelocityMLP, VelocityMLPConfig
from flowbox.odesolve import DerivativeField, SolverConfig, guided_field, integrate
from flowbox.toydata import (
    AlignedCorpusConfig,
    eight_gaussians,
    gaussian_1d,
    gen_aligned_corpus,
    gen_mixture,
    load_corpus,
    load_points,
    save_corpus,
    save_points,
    standard_normal,
)

from .checkpoint import config_hash, join_sections, load_checkpoint, save_checkpoint, split_sections
from .config import RunConfig, load_config
from .metrics import MetricsWriter, energy_distance, mmd2
from .plots import plot_report
from .train import (
    AudioBatchSpec,
    TrainConfig,
    eval_audio_loss,
    train_audio_fm,
    train_duration,
    train_mixture_fm,
)

log = logging.getLogger("flowbox")

MIXTURES = {"eight_gaussians": eight_gaussians, "gaussian_1d": gaussian_1d, "standard_normal": standard_normal}
FINETUNE_KIND = {"finetune-speech": "speech", "finetune-sound": "sound", "finetune-unified": None}


class RunError(RuntimeError):
    pass


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _pick(cls, d: dict | None):
    """Build a dataclass from a dict, rejecting unknown keys."""
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise RunError(f"{cls.__name__}: unknown keys {unknown}")
    return cls(**d)


# ---------------------------------------------------------------- models

def build_model(kind: str, model_cfg: dict, rng: np.random.Generator):
    if kind == "mlp":
        return VelocityMLP(_pick(VelocityMLPConfig, model_cfg), rng)
    if kind == "audio":
        return AudioFlowModel(_pick(AudioModelConfig, model_cfg), rng)
    if kind == "duration":
        return DurationModel(_pick(DurationModelConfig, model_cfg), rng)
    raise RunError(f"unknown model kind {kind!r}")


def model_metadata(model, kind: str, lora_rank=None) -> dict:
    return {"model_kind": kind, "model_config": model.cfg.to_dict(), "lora_rank": lora_rank}


def load_model(path, seed: int = 0):
    """Rebuild the model recorded in a checkpoint (LoRA adapters included) and load its tensors."""
    tensors, meta = load_checkpoint(path)
    sections = split_sections(tensors)
    if "model" not in sections:
        raise RunError(f"{path}: no model section")
    model = build_model(meta["model_kind"], meta["model_config"], _rng(seed, 0))
    if meta.get("lora_rank"):
        model.enable_lora(int(meta["lora_rank"]), _rng(seed, 1))
    model.load_state_dict(sections["model"], strict=True)
    return model, meta, sections


def _save(cfg: RunConfig, model, kind: str, step: int, extra_sections=None, extra_meta=None,
          lora_rank=None) -> Path:
    meta = {"mode": cfg.mode, "step": int(step), "seed": cfg.seed, "run_id": cfg.run_id,
            "config": cfg.raw, "config_hash": config_hash(cfg.raw), **model_metadata(model, kind, lora_rank)}
    meta.update(extra_meta or {})
    sections = {"model": model.state_dict(), **(extra_sections or {})}
    return save_checkpoint(cfg.out_dir / "checkpoint.fbck", join_sections(sections), meta)


# ---------------------------------------------------------------- data

def gen_data(spec: dict, out: Path, seed: int) -> Path:
    """``spec`` is the data section: aligned corpus (``corpus`` sub-dict) or named mixture points."""
    out = Path(out)
    if spec["kind"] == "aligned":
        ccfg = _pick(AlignedCorpusConfig, {**spec.get("corpus", {}), "seed": seed})
        return save_corpus(gen_aligned_corpus(ccfg), ccfg, out)
    mix = MIXTURES[spec.get("name", "eight_gaussians")]()
    rng = _rng(seed, 10)
    out.mkdir(parents=True, exist_ok=True)
    save_points(out / "train.txt", gen_mixture(mix, int(spec.get("n", 20000)), rng))
    save_points(out / "eval.txt", gen_mixture(mix, int(spec.get("n_eval", 2000)), rng))
    return out


def _mixture_data(data: dict, seed: int):
    if data.get("path"):
        root = Path(data["path"])
        return load_points(root / "train.txt"), load_points(root / "eval.txt"), None
    mix = MIXTURES[data.get("name", "eight_gaussians")]()
    rng = _rng(seed, 10)
    if data.get("labels"):
        x, lab = gen_mixture(mix, int(data.get("n", 20000)), rng, return_labels=True)
    else:
        x, lab = gen_mixture(mix, int(data.get("n", 20000)), rng), None
    return x, gen_mixture(mix, int(data.get("n_eval", 2000)), rng), lab


def _corpus(data: dict, seed: int):
    if data.get("path"):
        return load_corpus(data["path"])
    ccfg = _pick(AlignedCorpusConfig, {**data.get("corpus", {}), "seed": seed})
    return gen_aligned_corpus(ccfg), ccfg


# ---------------------------------------------------------------- logging helpers

def _loss_logger(writer: MetricsWriter, history: list):
    def cb(step, value, state=None):
        history.append((step, value))
        writer.log(step, "loss", value)
    return cb


def _loss_plot(cfg: RunConfig, history, tag="train"):
    if history:
        steps, vals = zip(*history)
        plot_report({tag: (np.array(steps), np.array(vals))}, "loss-curve", cfg.out_dir / "loss.svg",
                    title=f"{cfg.run_id} loss")


def _train_cfg(cfg: RunConfig, **defaults) -> TrainConfig:
    d = {**defaults, **cfg.section("train")}
    if cfg.raw.get("steps") is not None:
        d["steps"] = cfg.steps
    d.setdefault("seed", cfg.seed)
    return _pick(TrainConfig, d)


def _mask_spec(cfg: RunConfig, default: MaskSpec) -> MaskSpec:
    m = cfg.section("mask")
    return _pick(MaskSpec, {**default.__dict__, **m}) if m else default


def _dropout(cfg: RunConfig, default: DropoutPolicy | None) -> DropoutPolicy | None:
    if "dropout" in cfg.raw and cfg.raw["dropout"] is None:
        return None
    d = cfg.section("dropout")
    return _pick(DropoutPolicy, d) if d else default


# ---------------------------------------------------------------- modes

def run_pretrain(cfg: RunConfig, writer: MetricsWriter) -> dict:
    data = cfg.section("data")
    mcfg = cfg.section("model")
    kind = mcfg.pop("kind", "mlp" if data["kind"] == "mixture" else "audio")
    history: list = []
    cb = _loss_logger(writer, history)
    if kind == "mlp":
        if data["kind"] != "mixture":
            raise RunError("mlp models train on mixture data")
        x, x_eval, labels = _mixture_data(data, cfg.seed)
        mcfg.setdefault("dim", x.shape[1])
        if labels is not None:
            mcfg.setdefault("num_classes", int(labels.max()) + 1)
        model = build_model("mlp", mcfg, _rng(cfg.seed, 0))
        tcfg = _train_cfg(cfg, batch=256, lr=2e-3, warmup=100, clip=1.0)
        train_mixture_fm(model, x, tcfg, labels=labels, log=cb)
    else:
        if data["kind"] != "aligned":
            raise RunError(f"{kind} models train on aligned corpora")
        split, ccfg = _corpus(data, cfg.seed)
        tcfg = _train_cfg(cfg, batch=16, lr=1e-3, warmup=100, clip=0.2)
        if kind == "duration":
            mcfg.setdefault("token_vocab", ccfg.token_vocab)
            model = build_model("duration", mcfg, _rng(cfg.seed, 0))
            train_duration(model, split.train, tcfg, log=cb)
        else:
            mcfg.setdefault("feat_dim", ccfg.feat_dim)
            mcfg.setdefault("token_vocab", 0)  # self-supervised stage sees frames only
            model = build_model("audio", mcfg, _rng(cfg.seed, 0))
            spec = AudioBatchSpec(_mask_spec(cfg, pretrain_mask_spec()))
            train_audio_fm(model, split.train, tcfg, spec, log=cb)
            writer.log(tcfg.steps, "valid_loss", eval_audio_loss(model, split.valid, spec, seed=cfg.seed))
    _loss_plot(cfg, history)
    path = _save(cfg, model, kind, len(history))
    return {"checkpoint": str(path), "steps": len(history)}


def run_finetune(cfg: RunConfig, writer: MetricsWriter) -> dict:
    """Initialise from ``init_checkpoint`` (non-strict: new conditioning modules start fresh)."""
    init = Path(cfg.raw["init_checkpoint"])
    if not init.exists():
        raise RunError(f"init checkpoint {init} not found")
    tensors, meta = load_checkpoint(init)
    if meta.get("model_kind") != "audio":
        raise RunError(f"fine-tuning needs an audio checkpoint, got {meta.get('model_kind')!r}")
    split, ccfg = _corpus(cfg.section("data") or {"kind": "aligned"}, cfg.seed)
    kind_filter = FINETUNE_KIND[cfg.mode]
    train_u = [u for u in split.train if kind_filter is None or u.kind == kind_filter]
    if not train_u:
        raise RunError(f"corpus has no {kind_filter} utterances")

    mcfg = {**meta["model_config"], **{k: v for k, v in cfg.section("model").items() if k != "kind"}}
    mcfg["token_vocab"] = mcfg.get("token_vocab") or ccfg.token_vocab
    use_desc = cfg.mode in ("finetune-sound", "finetune-unified")
    use_vp = cfg.mode == "finetune-unified"
    if use_desc:
        from flowbox.toydata import DescriptionVocab
        mcfg["desc_vocab"] = mcfg.get("desc_vocab") or len(DescriptionVocab(ccfg.styles))
    mcfg["voice_prompt"] = bool(mcfg.get("voice_prompt")) or use_vp
    model = build_model("audio", mcfg, _rng(cfg.seed, 0))

    sections = split_sections(tensors)
    prev_rank = meta.get("lora_rank")
    lora_rank = cfg.raw.get("lora_rank")
    if prev_rank:
        model.enable_lora(int(prev_rank), _rng(cfg.seed, 1))
    missing = model.load_state_dict(sections["model"], strict=False)
    if missing:
        log.info("freshly initialised: %d tensors (%s ...)", len(missing), missing[0])
    if lora_rank and not prev_rank:
        new_mods = tuple(sorted({m.split(".")[0] for m in missing if not m.startswith("body.")}))
        model.enable_lora(int(lora_rank), _rng(cfg.seed, 1), train_extra=new_mods)
    lora_rank = lora_rank or prev_rank

    default_drop = {
        "finetune-speech": DropoutPolicy(p_vp_absent=1.0, p_ctx_absent_given_no_vp=0.2, p_cap_absent=1.0),
        "finetune-sound": DropoutPolicy(p_vp_absent=1.0, p_ctx_absent_given_no_vp=0.1, p_cap_absent=0.1),
        "finetune-unified": DropoutPolicy(),
    }[cfg.mode]
    spec = AudioBatchSpec(_mask_spec(cfg, finetune_mask_spec()), _dropout(cfg, default_drop),
                          voice_prompt=use_vp, description=use_desc)
    start = int(meta.get("step", 0))
    tcfg = _train_cfg(cfg, batch=16, lr=1e-3, warmup=50, clip=0.2)
    history: list = []
    train_audio_fm(model, train_u, tcfg, spec, log=_loss_logger(writer, history), start_step=start)
    valid_u = [u for u in split.valid if kind_filter is None or u.kind == kind_filter] or split.valid
    writer.log(start + tcfg.steps, "valid_loss", eval_audio_loss(model, valid_u, spec, seed=cfg.seed))
    _loss_plot(cfg, history)
    path = _save(cfg, model, "audio", start + tcfg.steps, lora_rank=lora_rank,
                 extra_meta={"init_checkpoint": str(init), "init_config_hash": meta.get("config_hash")})
    return {"checkpoint": str(path), "steps": start + tcfg.steps}


def _solver(cfg: RunConfig, **defaults) -> SolverConfig:
    d = {**defaults, **cfg.section("solver")}
    if "t_span" in d:
        d["t_span"] = tuple(d["t_span"])
    return _pick(SolverConfig, d)


def _mlp_field(model, n: int, cfg: RunConfig, label=None) -> DerivativeField:
    w = float(cfg.section("guidance").get("weight", 0.0))
    if label is None or not model.cfg.num_classes:
        return DerivativeField(lambda x, t: model(x, t))
    lab = np.full(n, int(label))
    if w == 0:
        return DerivativeField(lambda x, t: model(x, t, lab))
    return guided_field(lambda x, t: model(x, t, lab), lambda x, t: model(x, t, None), w)


def _require_mlp(meta, mode):
    if meta["model_kind"] != "mlp":
        raise RunError(f"{mode} supports mlp checkpoints only (got {meta['model_kind']})")


def run_bespoke(cfg: RunConfig, writer: MetricsWriter) -> dict:
    model, meta, _ = load_model(cfg.raw["init_checkpoint"], cfg.seed)
    _require_mlp(meta, "bespoke")
    b = cfg.section("bespoke")
    n_gt = int(b.pop("n_trajectories", 512))
    n_ckpt = int(b.pop("gt_steps", 200))
    label = b.pop("label", None)
    bcfg = _pick(BespokeConfig, {"seed": cfg.seed, **b, **({"iters": cfg.steps} if cfg.raw.get("steps") else {})})
    x0 = _rng(cfg.seed, 20).standard_normal((n_gt, model.cfg.dim))
    w = float(cfg.section("guidance").get("weight", 0.0))
    with dc.no_grad():
        gt = generate_gt(lambda idx: _mlp_field(model, len(idx), cfg, label), x0, N=n_ckpt, weight=w)
    history: list = []
    params, curve = train_bespoke(None, gt, bcfg, callback=lambda it, v: history.append((it + 1, v)),
                                  make_field=lambda idx: _mlp_field(model, len(idx), cfg, label))
    writer.log_many((s, "bespoke_loss", v) for s, v in history)
    full = _mlp_field(model, len(gt.x0), cfg, label)
    with dc.no_grad():
        x1, nfe, calls = bespoke_sample(params, full, gt.x0, bcfg.base_method)
    writer.log(nfe, "rmse@bespoke", end_state_rmse(x1, gt))
    _loss_plot(cfg, history, tag="bespoke")
    path = _save(cfg, model, "mlp", int(meta.get("step", 0)),
                 extra_sections={"bespoke": params.state_dict()},
                 extra_meta={"bespoke": {**bcfg.__dict__, "weight": w, "label": label}})
    return {"checkpoint": str(path), "nfe": nfe, "model_calls": calls}


def run_jointembed(cfg: RunConfig, writer: MetricsWriter) -> dict:
    split, ccfg = _corpus(cfg.section("data"), cfg.seed)
    from flowbox.toydata import DescriptionVocab
    jm = {"feat_dim": ccfg.feat_dim, "desc_vocab": len(DescriptionVocab(ccfg.styles)), **cfg.section("model")}
    jm.pop("kind", None)
    model = JointEmbedder(_pick(JointEmbedConfig, jm), _rng(cfg.seed, 0))
    jt = {"seed": cfg.seed, **cfg.section("jointembed"), **({"steps": cfg.steps} if cfg.raw.get("steps") else {})}
    jcfg = _pick(JointTrainConfig, jt)
    _, hist = train_joint_embedder(model, split.train, split.valid, jcfg)
    writer.log_many((s, name, v) for name, s, v in hist)
    test = retrieval_metrics(*embed_utterances(model, unique_by_description(split.test)))
    writer.log_many((jcfg.steps, f"test_{k}", v) for k, v in sorted(test.items()))
    _loss_plot(cfg, [(s, v) for name, s, v in hist if name == "loss"])
    meta = {"mode": cfg.mode, "step": jcfg.steps, "seed": cfg.seed, "run_id": cfg.run_id, "config": cfg.raw,
            "config_hash": config_hash(cfg.raw), "model_kind": "jointembed", "model_config": model.cfg.to_dict(),
            "lora_rank": None}
    path = save_checkpoint(cfg.out_dir / "checkpoint.fbck", join_sections({"model": model.state_dict()}), meta)
    return {"checkpoint": str(path), **{f"test_{k}": v for k, v in test.items()}}


def _sample_mlp(model, sections, cfg: RunConfig, n: int, x0=None):
    """Returns (samples, nfe, model_calls); uses the bespoke section when the solver method is 'bespoke'."""
    scfg = cfg.section("solver")
    label = cfg.section("sample").get("label")
    x0 = _rng(cfg.seed, 30).standard_normal((n, model.cfg.dim)) if x0 is None else x0
    fld = _mlp_field(model, len(x0), cfg, label)
    with dc.no_grad():
        if scfg.get("method") == "bespoke":
            bsec = sections.get("bespoke")
            if bsec is None and cfg.raw.get("bespoke_checkpoint"):
                bsec = split_sections(load_checkpoint(cfg.raw["bespoke_checkpoint"])[0]).get("bespoke")
            if bsec is None:
                raise RunError("bespoke solver requested but no bespoke parameters found")
            return bespoke_sample(BespokeParams.from_state(bsec), fld, x0, scfg.get("base_method", "midpoint"))
        x1, tr = integrate(fld, x0, _solver(cfg), record=False)
        return x1, tr.nfe, tr.model_calls


def run_sample(cfg: RunConfig, writer: MetricsWriter) -> dict:
    model, meta, sections = load_model(cfg.raw["init_checkpoint"], cfg.seed)
    s = cfg.section("sample")
    n = int(s.get("n", 2000))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if meta["model_kind"] == "mlp":
        x1, nfe, calls = _sample_mlp(model, sections, cfg, n)
        save_points(out / "samples.txt", x1)
        if x1.shape[1] == 2:
            plot_report({"samples": x1}, "scatter2d", out / "samples.svg", title=cfg.run_id)
        writer.log(nfe, "nfe", nfe)
        writer.log(nfe, "model_calls", calls)
        return {"samples": str(out / "samples.txt"), "nfe": nfe, "model_calls": calls}
    if meta["model_kind"] != "audio":
        raise RunError(f"sample does not support {meta['model_kind']} checkpoints")
    split, _ = _corpus(cfg.section("data") or {"kind": "aligned"}, cfg.seed)
    rng = _rng(cfg.seed, 31)
    mcfg = model.cfg
    cfgw = CFGConfig(float(cfg.section("guidance").get("weight", 0.0)))
    solver = _solver(cfg)
    res = []
    for u in split.test[: int(s.get("utterances", 8))]:
        mask = sample_mask(u.num_frames, finetune_mask_spec(), rng)
        from flowbox.flowmatch import pseudo_voice_prompt
        vp = pseudo_voice_prompt(u.frames.shape[1]) if mcfg.voice_prompt else None
        b = bundle_from_utterance(u, mask, vp, use_description=bool(mcfg.desc_vocab))
        if not mcfg.token_vocab:
            b.tokens[:] = 0
        gen = generate_infill(model, b, solver, cfgw, rng)
        res.append(gen.frames)
        err = float(np.sqrt(np.mean((gen.frames - u.frames)[mask] ** 2))) if mask.any() else 0.0
        writer.log(len(res), "infill_rmse", err)
    np.savez(out / "samples.npz", *res)
    return {"samples": str(out / "samples.npz"), "count": len(res)}


def run_eval(cfg: RunConfig, writer: MetricsWriter) -> dict:
    """Distance to held-out data and end-state error against dopri5 over a solver sweep."""
    model, meta, sections = load_model(cfg.raw["init_checkpoint"], cfg.seed)
    if meta["model_kind"] != "mlp":
        split, _ = _corpus(cfg.section("data") or {"kind": "aligned"}, cfg.seed)
        if meta["model_kind"] != "audio":
            raise RunError(f"eval does not support {meta['model_kind']} checkpoints")
        spec = AudioBatchSpec(finetune_mask_spec(), None, voice_prompt=model.cfg.voice_prompt,
                              description=bool(model.cfg.desc_vocab))
        val = eval_audio_loss(model, split.test, spec, seed=cfg.seed)
        writer.log(int(meta.get("step", 0)), "test_loss", val)
        return {"test_loss": val}
    e = cfg.section("eval")
    n = int(e.get("n", 2000))
    data = meta["config"].get("data", {}) if not cfg.raw.get("data") else cfg.section("data")
    _, held, _ = _mixture_data(data, int(meta.get("seed", cfg.seed)))
    held = held[:n]
    x0 = _rng(cfg.seed, 40).standard_normal((n, model.cfg.dim))
    label = cfg.section("sample").get("label")
    fld = _mlp_field(model, n, cfg, label)
    with dc.no_grad():
        ref, _ = integrate(fld, x0, SolverConfig("dopri5", atol=1e-5, rtol=1e-5), record=False)
    writer.log(0, "mmd2@prior", mmd2(x0, held))
    sweep = e.get("sweep", [["euler", [4, 8, 16, 32]], ["midpoint", [2, 4, 8, 16]], ["rk4", [1, 2, 4, 8]]])
    series: dict = {}
    results = {}
    for method, steps_list in sweep:
        for k in steps_list:
            sub = RunConfig({**cfg.raw, "solver": {"method": method, "step_size": 1.0 / k}}, cfg.mode,
                            cfg.seed, cfg.run_id, cfg.out_dir)
            x1, nfe, _ = _sample_mlp(model, sections, sub, n, x0)
            rmse = float(np.sqrt(np.mean((x1 - ref) ** 2)))
            writer.log(nfe, f"rmse@{method}", rmse)
            writer.log(nfe, f"mmd2@{method}", mmd2(x1, held))
            series.setdefault(method, ([], []))
            series[method][0].append(nfe)
            series[method][1].append(max(rmse, 1e-12))
            results[f"{method}-{k}"] = rmse
    if "bespoke" in sections or cfg.raw.get("bespoke_checkpoint"):
        sub = RunConfig({**cfg.raw, "solver": {"method": "bespoke"}}, cfg.mode, cfg.seed, cfg.run_id, cfg.out_dir)
        x1, nfe, _ = _sample_mlp(model, sections, sub, n, x0)
        rmse = float(np.sqrt(np.mean((x1 - ref) ** 2)))
        writer.log(nfe, "rmse@bespoke", rmse)
        writer.log(nfe, "mmd2@bespoke", mmd2(x1, held))
        series["bespoke"] = ([nfe], [max(rmse, 1e-12)])
        results["bespoke"] = rmse
    writer.log(0, "mmd2@dopri5", mmd2(ref, held))
    writer.log(0, "energy@dopri5", energy_distance(ref, held))
    plot_report({k: (np.array(v[0]), np.array(v[1])) for k, v in series.items()}, "error-vs-nfe",
                cfg.out_dir / "error_vs_nfe.svg", title=f"{cfg.run_id}: RMSE to dopri5")
    return results


HANDLERS = {
    "pretrain": run_pretrain,
    "finetune-speech": run_finetune,
    "finetune-sound": run_finetune,
    "finetune-unified": run_finetune,
    "bespoke": run_bespoke,
    "jointembed": run_jointembed,
    "sample": run_sample,
    "eval": run_eval,
}


def run(source, env=None) -> dict:
    """Validate ``source`` (path or dict), execute its mode, return a summary dict."""
    cfg = source if isinstance(source, RunConfig) else load_config(source, env)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    metrics = cfg.out_dir / "metrics.csv"
    if metrics.exists():
        metrics.unlink()  # one run per directory; reruns start a fresh CSV
    writer = MetricsWriter(metrics, cfg.run_id)
    summary = HANDLERS[cfg.mode](cfg, writer)
    (cfg.out_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True))
    return summary
