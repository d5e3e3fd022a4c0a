"""Command-line interface for the video imitation pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import restore_modules, save_named_params
from .envs import EnvConfig, VideoDataset, record_expert_videos
from .errors import ConfigurationError, VideoBCError
from .features import FeaturePretrainer
from .harness import (ExperimentConfig, apply_overrides,
                      default_experiment_config, parse_config_file,
                      run_experiment, run_multitask, run_random_baseline,
                      run_video_sweep)
from .latentact import LatentActionLearner, make_quantizer
from .nets import (ActionDecoder, FeatureEncoder, LatentActionPredictor,
                   LatentPolicy, WorldModel)
from .online import OnlineImitator, PolicyBundle
from .plots import emit_plots


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat dotted-key config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--env", default=None, help="environment id "
                   "(gridpix or pointpix); sets per-env defaults")
    p.add_argument("--seed", type=int, default=None,
                   help="run a single seed instead of the configured list")
    p.add_argument("--out", default=None, help="output directory")


def _build_config(args) -> ExperimentConfig:
    overrides = dict(parse_config_file(args.config)) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    env_id = args.env or overrides.pop("env.env_id", "gridpix")
    cfg = default_experiment_config(env_id)
    cfg = apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _build_encoder(cfg: ExperimentConfig) -> FeatureEncoder:
    return FeatureEncoder(cfg.env.image_size, cfg.env.obs_channels,
                          cfg.features.feature_dim, cfg.features.channels)


def _load_videos(cfg: ExperimentConfig, path: str | None, seed: int):
    if path:
        return VideoDataset.load(path).truncate(cfg.video_budget)
    return record_expert_videos(cfg.env, cfg.video_budget,
                                seed=1_000_000 + seed)


def cmd_gen_expert(args) -> int:
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    videos = _load_videos(cfg, None, seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.env.env_id}_videos_seed{seed}.bcvv"
    videos.save(path)
    print(f"wrote {len(videos)} frames ({videos.n_episodes} episodes) "
          f"to {path}")
    return 0


def cmd_pretrain_features(args) -> int:
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    videos = _load_videos(cfg, args.video, seed)
    trainer = FeaturePretrainer(replace(cfg.features, seed=seed)).fit(videos)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.bcvw"
    save_named_params(path, {"encoder": trainer.encoder_,
                             "momentum_encoder": trainer.momentum_encoder_})
    print(f"final pretraining loss {trainer.loss_history_[-1]:.4f}; "
          f"wrote {path}")
    return 0


def cmd_pretrain_actions(args) -> int:
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    videos = _load_videos(cfg, args.video, seed)
    encoder = _build_encoder(cfg)
    restore_modules(args.features, {"encoder": encoder})
    learner = LatentActionLearner(replace(cfg.latentact, seed=seed)).fit(
        videos, encoder)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "actions.bcvw"
    save_named_params(path, {"predictor": learner.predictor_,
                             "quantizer": learner.quantizer_,
                             "world_model": learner.world_model_})
    print(f"final dynamics loss {learner.loss_history_[-1]:.4f}; "
          f"wrote {path}")
    return 0


def cmd_online(args) -> int:
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    videos = _load_videos(cfg, args.video, seed)
    encoder = _build_encoder(cfg)
    restore_modules(args.features, {"encoder": encoder})
    predictor = LatentActionPredictor(encoder.feature_dim,
                                      cfg.latentact.latent_dim)
    world_model = WorldModel(encoder.feature_dim, cfg.latentact.latent_dim)
    quantizer = make_quantizer(cfg.latentact)
    restore_modules(args.actions, {"predictor": predictor,
                                   "quantizer": quantizer,
                                   "world_model": world_model})
    imitator = OnlineImitator(replace(cfg.online, seed=seed)).fit(
        cfg.env, videos, encoder, predictor, quantizer, world_model)
    stats = imitator.evaluate(cfg.final_eval_episodes)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_named_params(out / "policy.bcvw",
                      {"encoder": encoder, "policy": imitator.policy,
                       "decoder": imitator.decoder})
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    cfg = _build_config(args)
    run_dir = run_experiment(cfg)
    print(f"run complete: {run_dir}")
    print((run_dir / "summary.json").read_text().strip())
    return 0


def cmd_ablate(args) -> int:
    cfg = _build_config(args)
    variants = args.variants.split(",")
    for variant in variants:
        vcfg = replace(cfg, variant=variant)
        run_dir = run_experiment(vcfg)
        summary = json.loads((run_dir / "summary.json").read_text())
        print(f"{variant}: mean_success={summary['mean_success']:.3f}")
    return 0


def cmd_sweep_video(args) -> int:
    cfg = _build_config(args)
    budgets = [int(b) for b in args.budgets.split(",")]
    out = run_video_sweep(cfg, budgets)
    for budget in sorted(out):
        print(f"budget {budget}: "
              f"mean_success={out[budget]['mean_success']:.3f}")
    return 0


def cmd_multitask(args) -> int:
    cfg = _build_config(args)
    env_cfgs = [EnvConfig.for_env(e) for e in args.envs.split(",")]
    target = EnvConfig.for_env(args.target)
    run_dir = run_multitask(env_cfgs, target, cfg)
    print((run_dir / "summary.json").read_text().strip())
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    if args.random:
        stats = run_random_baseline(cfg)
    elif args.checkpoint is None:
        raise ConfigurationError("eval needs --checkpoint or --random")
    else:
        encoder = _build_encoder(cfg)
        policy = LatentPolicy(encoder.feature_dim, cfg.latentact.latent_dim)
        out_dim = (cfg.env.n_actions if cfg.env.discrete
                   else cfg.env.action_dim)
        decoder = ActionDecoder(cfg.latentact.latent_dim, out_dim,
                                cfg.env.discrete)
        restore_modules(args.checkpoint, {"encoder": encoder,
                                          "policy": policy,
                                          "decoder": decoder})
        from .envs import evaluate_policy
        bundle = PolicyBundle(encoder, policy, decoder)
        stats = evaluate_policy(bundle, cfg.env, cfg.final_eval_episodes,
                                seed=9_500_000)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    written = emit_plots(args.runs, args.plot_out or args.out or "plots")
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="videobc",
        description="Imitation learning from action-free videos")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = [
        ("gen-expert", cmd_gen_expert, "record expert videos", []),
        ("pretrain-features", cmd_pretrain_features,
         "self-supervised feature pretraining",
         [("--video", dict(help="existing video file"))]),
        ("pretrain-actions", cmd_pretrain_actions,
         "latent action pretraining",
         [("--video", dict(help="existing video file")),
          ("--features", dict(required=True, help="features checkpoint"))]),
        ("online", cmd_online, "online finetuning and cloning",
         [("--video", dict(help="existing video file")),
          ("--features", dict(required=True)),
          ("--actions", dict(required=True))]),
        ("run", cmd_run, "full pipeline (all stages, all seeds)", []),
        ("ablate", cmd_ablate, "run ablation variants",
         [("--variants", dict(default="full,wo_la,wo_ft"))]),
        ("sweep-video", cmd_sweep_video, "video data-efficiency sweep",
         [("--budgets", dict(default="500,2000,8000"))]),
        ("multitask", cmd_multitask, "mixed-video pretraining",
         [("--envs", dict(required=True, help="comma-separated env ids")),
          ("--target", dict(required=True, help="online target env id"))]),
        ("eval", cmd_eval, "evaluate a policy checkpoint",
         [("--checkpoint", dict(help="policy checkpoint file")),
          ("--random", dict(action="store_true",
                            help="evaluate the random baseline"))]),
        ("plot", cmd_plot, "emit curves and summary table",
         [("--runs", dict(required=True, help="runs directory")),
          ("--plot-out", dict(dest="plot_out", help="plot output dir"))]),
    ]
    for name, fn, help_text, extra in specs:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        for flag, kwargs in extra:
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except VideoBCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
