"""Experiment orchestration: configs, variants, sweeps, metrics and plots."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_named_params
from .envs import (EnvConfig, RandomPolicy, VideoDataset, evaluate_policy,
                   record_expert_videos)
from .envs.video import record_labeled_transitions
from .errors import ConfigurationError, VideoBCError
from .features import (CONTRASTIVE_RECON,
                       FeaturePretrainConfig, FeaturePretrainer)
from .latentact import (LatentActionConfig, LatentActionLearner,
                        make_quantizer)
from .nets import FeatureEncoder, LatentActionPredictor, WorldModel
from .online import OnlineConfig, OnlineImitator, Transition

VARIANTS = ("full", "wo_lf", "wo_la", "wo_ft", "offline_labeled")

CSV_HEADER = "step,metric,value,seed,variant"


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    features: FeaturePretrainConfig = field(
        default_factory=FeaturePretrainConfig)
    latentact: LatentActionConfig = field(default_factory=LatentActionConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    seeds: tuple = (1, 2, 3)
    variant: str = "full"
    video_budget: int = 20000
    labeled_budget: int = 2000    # offline_labeled variant only
    final_eval_episodes: int = 100
    output_dir: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.video_budget < 2 * self.env.horizon:
            raise ConfigurationError("video_budget too small")


def default_experiment_config(env_id: str, **overrides) -> ExperimentConfig:
    """Desk-scale defaults per environment family."""
    env = EnvConfig.for_env(env_id)
    if env_id == "gridpix":
        feats = FeaturePretrainConfig(task=CONTRASTIVE_RECON, pad_max=1,
                                      alpha=0.1, update_count=1500)
        online = OnlineConfig(total_steps=20000, beta=15.0)
        budget = 20000
    else:
        feats = FeaturePretrainConfig(task=CONTRASTIVE_RECON, pad_max=1,
                                      alpha=0.5, temporal_negatives=True,
                                      update_count=1500)
        online = OnlineConfig(total_steps=30000, beta=1e-5,
                              finetune_world_model=True,
                              lr_world_model_ft=1e-5, lr_predictor_ft=1e-3)
        budget = 12000
    cfg = ExperimentConfig(env=env, features=feats,
                           latentact=LatentActionConfig(), online=online,
                           video_budget=budget)
    return apply_overrides(cfg, overrides) if overrides else cfg


# -- flat dotted-key config files ---------------------------------------------

def _coerce(value: str, typ):
    if typ is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    if typ is tuple:
        return tuple(int(v) for v in value.split(","))
    return value.strip()


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply {'online.beta': '15', ...} style overrides onto a config."""
    groups: dict[str, dict] = {}
    top: dict = {}
    for key, value in overrides.items():
        if "." in key:
            head, rest = key.split(".", 1)
            groups.setdefault(head, {})[rest] = value
        else:
            top[key] = value

    def rebuild(obj, updates):
        kwargs = {}
        known = {f.name: f for f in fields(obj)}
        for k, v in updates.items():
            if k not in known:
                raise ConfigurationError(f"unknown config key {k!r}")
            typ = type(getattr(obj, k))
            kwargs[k] = _coerce(v, typ) if isinstance(v, str) else v
        return replace(obj, **kwargs)

    sub = {}
    for name, updates in groups.items():
        if name not in ("env", "features", "latentact", "online"):
            raise ConfigurationError(f"unknown config group {name!r}")
        sub[name] = rebuild(getattr(cfg, name), updates)
    out = replace(cfg, **sub) if sub else cfg
    return rebuild(out, top) if top else out


def parse_config_file(path) -> dict:
    """Read `a.b = value` lines; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_snapshot(cfg: ExperimentConfig) -> str:
    """Canonical flat text rendering of a config (diff- and hash-friendly)."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                lines.append(f"{f.name}.{sub.name} = {getattr(value, sub.name)}")
        elif f.name == "seeds":
            lines.append(f"seeds = {','.join(str(s) for s in value)}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the snapshot minus variant/output lines, so runs of different
    variants of one experiment remain plot-compatible."""
    lines = [l for l in config_snapshot(cfg).splitlines()
             if not l.startswith(("variant ", "output_dir "))]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


# -- metrics persistence -------------------------------------------------------

class MetricsStore:
    """Append-only per-(variant, seed) CSV files plus a run manifest."""

    def __init__(self, run_dir: Path, variant: str, seed: int):
        self.path = Path(run_dir) / f"metrics_{variant}_seed{seed}.csv"
        self.variant = variant
        self.seed = seed
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(CSV_HEADER + "\n")

    def append(self, step: int, metric: str, value: float) -> None:
        with open(self.path, "a") as fh:
            fh.write(f"{step},{metric},{value!r},{self.seed},{self.variant}\n")


def _write_manifest(run_dir: Path, cfg: ExperimentConfig, seed: int,
                    status: str, extra: dict | None = None) -> None:
    manifest = {
        "config_hash": config_hash(cfg),
        "variant": cfg.variant,
        "seed": seed,
        "status": status,
    }
    manifest.update(extra or {})
    (run_dir / f"manifest_seed{seed}.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- single-seed pipeline ------------------------------------------------------

def _pretrain_stages(cfg: ExperimentConfig, videos: VideoDataset, seed: int):
    """Run the offline stages for one seed, honoring the variant."""
    import torch

    feats_cfg = replace(cfg.features, seed=seed)
    la_cfg = replace(cfg.latentact, seed=seed)

    if cfg.variant == "wo_lf":
        torch.manual_seed(seed)
        h, w, c = videos.frames.shape[1:]
        encoder = FeatureEncoder(h, c, feats_cfg.feature_dim,
                                 feats_cfg.channels)
        pretrainer = None
    else:
        pretrainer = FeaturePretrainer(feats_cfg).fit(videos)
        encoder = pretrainer.encoder_

    if cfg.variant == "wo_la":
        torch.manual_seed(seed + 1)
        predictor = LatentActionPredictor(encoder.feature_dim,
                                          la_cfg.latent_dim)
        world_model = WorldModel(encoder.feature_dim, la_cfg.latent_dim)
        quantizer = make_quantizer(la_cfg)
        learner = None
    else:
        learner = LatentActionLearner(la_cfg).fit(videos, encoder)
        predictor = learner.predictor_
        quantizer = learner.quantizer_
        world_model = learner.world_model_
    return encoder, predictor, quantizer, world_model, pretrainer, learner


def run_seed(cfg: ExperimentConfig, videos: VideoDataset, seed: int,
             run_dir: Path) -> dict:
    """Full pipeline for one seed; returns final evaluation stats."""
    store = MetricsStore(run_dir, cfg.variant, seed)
    encoder, predictor, quantizer, world_model, pretrainer, learner = \
        _pretrain_stages(cfg, videos, seed)
    if pretrainer is not None:
        for step, value in enumerate(pretrainer.loss_history_):
            if step % 100 == 0:
                store.append(step, "l_lf", value)
    if learner is not None:
        for step, value in enumerate(learner.loss_history_):
            if step % 100 == 0:
                store.append(step, "l_la", value)

    online_cfg = replace(
        cfg.online, seed=seed,
        freeze_predictor=(cfg.variant == "wo_ft"),
        train_encoder=(cfg.variant == "wo_lf"))
    imitator = OnlineImitator(online_cfg)
    if cfg.variant == "offline_labeled":
        labeled = record_labeled_transitions(cfg.env, cfg.labeled_budget,
                                             seed=7_000_000 + seed)
        transitions = [Transition(o, a, n) for o, a, n in labeled]
        imitator.fit_offline(cfg.env, videos, transitions, encoder,
                             predictor, quantizer, world_model)
    else:
        imitator.fit(cfg.env, videos, encoder, predictor, quantizer,
                     world_model)
    for row in imitator.metrics_:
        for metric in ("l_ft", "l_bc", "perplexity", "eval_success",
                       "eval_return"):
            if not np.isnan(row[metric]):
                store.append(row["env_steps"], metric, row[metric])

    stats = imitator.evaluate(cfg.final_eval_episodes, seed=9_500_000)
    store.append(online_cfg.total_steps, "final_success",
                 stats["success_rate"])
    store.append(online_cfg.total_steps, "final_return", stats["mean_return"])
    save_named_params(run_dir / f"checkpoint_seed{seed}.bcvw", {
        "encoder": encoder, "predictor": predictor, "quantizer": quantizer,
        "world_model": world_model, "policy": imitator.policy,
        "decoder": imitator.decoder,
    })
    _write_manifest(run_dir, cfg, seed, "ok", {"final": stats})
    return stats


def run_experiment(cfg: ExperimentConfig,
                   videos: VideoDataset | None = None) -> Path:
    """Run all seeds of one variant; returns the run directory."""
    run_dir = Path(cfg.output_dir) / f"{cfg.env.env_id}_{cfg.variant}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config_snapshot(cfg))
    results = {}
    for seed in cfg.seeds:
        if videos is None:
            vids = record_expert_videos(cfg.env, cfg.video_budget,
                                        seed=1_000_000 + seed)
        else:
            vids = videos.truncate(cfg.video_budget)
        try:
            results[seed] = run_seed(cfg, vids, seed, run_dir)
        except VideoBCError as exc:
            _write_manifest(run_dir, cfg, seed, f"error: {exc}")
            raise
    summary = {
        "mean_success": float(np.mean([r["success_rate"]
                                       for r in results.values()])),
        "per_seed": {str(s): r for s, r in results.items()},
    }
    (run_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return run_dir


def run_random_baseline(cfg: ExperimentConfig) -> dict:
    """Uniform-random policy reference under the same evaluation protocol."""
    stats = evaluate_policy(RandomPolicy(cfg.env, seed=0), cfg.env,
                            cfg.final_eval_episodes, seed=9_500_000)
    run_dir = Path(cfg.output_dir) / f"{cfg.env.env_id}_random"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "summary.json").write_text(
        json.dumps({"mean_success": stats["success_rate"],
                    "stats": stats}, indent=2, sort_keys=True) + "\n")
    return stats


def run_multitask(env_cfgs: list[EnvConfig], online_target: EnvConfig,
                  cfg: ExperimentConfig) -> Path:
    """Pretrain on mixed videos from several configs, adapt on the target."""
    shapes = {c.obs_shape for c in env_cfgs} | {online_target.obs_shape}
    if len(shapes) != 1:
        raise ConfigurationError("observation shapes differ across tasks")
    kinds = {c.discrete for c in env_cfgs} | {online_target.discrete}
    if len(kinds) != 1:
        raise ConfigurationError("action spaces differ across tasks")
    per_task = max(2 * max(c.horizon for c in env_cfgs),
                   cfg.video_budget // len(env_cfgs))
    frames, starts, offset = [], [], 0
    for i, env_cfg in enumerate(env_cfgs):
        vids = record_expert_videos(env_cfg, per_task, seed=1_000_000 + i)
        frames.append(vids.frames)
        starts.append(vids.episode_starts + offset)
        offset += len(vids.frames)
    mixed = VideoDataset(np.concatenate(frames), np.concatenate(starts),
                         {"env_id": "mixed"})
    cfg = replace(cfg, env=online_target, video_budget=len(mixed.frames))
    return run_experiment(cfg, videos=mixed)


def run_video_sweep(cfg: ExperimentConfig, budgets: list[int]) -> dict:
    """Data-efficiency sweep over video budgets; returns budget -> summary."""
    out = {}
    base = record_expert_videos(cfg.env, max(budgets), seed=1_999_000)
    for budget in budgets:
        sub = replace(cfg, video_budget=budget,
                      output_dir=str(Path(cfg.output_dir) / f"vb{budget}"))
        run_dir = run_experiment(sub, videos=base)
        out[budget] = json.loads((run_dir / "summary.json").read_text())
    sweep_dir = Path(cfg.output_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "sweep_summary.json").write_text(
        json.dumps({str(k): v["mean_success"] for k, v in out.items()},
                   indent=2, sort_keys=True) + "\n")
    return out
