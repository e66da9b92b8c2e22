"""Command-line experiment runner.

    maskrl train --preset desk --seed 0 --out runs/reach0
    maskrl eval --checkpoint runs/reach0/checkpoint_final --episodes 10
    maskrl toy --seeds 10 --out runs/toy
    maskrl maskdemo --out runs/maskdemo
    maskrl activations --checkpoint runs/reach0/checkpoint_final --out runs/act
    maskrl plot --metrics runs/*/metrics.jsonl --key eval_success --out curve.png

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 environment failure. MASKRL_OUT_ROOT sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import agents, analysis, masktools, plotting, toylab
from . import numerics as nm
from .config import ConfigError, RunConfig, build_run_config, config_from_dicts, parse_config_file
from .envs import ConfigError as EnvConfigError
from .envs import EnvConfig, PointMassEnv, render
from .images import write_pgm, write_ppm
from .numerics import NumericError, Rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ENV = 4


def out_root() -> Path:
    return Path(os.environ.get("MASKRL_OUT_ROOT", "runs"))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key = value config file")
    p.add_argument("--preset", type=str, default="desk", choices=["desk", "paper"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--out", type=str, default=None, help="output directory")


def _load_run_config(args) -> RunConfig:
    sections = parse_config_file(args.config) if args.config else None
    return build_run_config(sections, args.preset, args.overrides,
                            seed=args.seed, out_dir=args.out)


def cmd_train(args) -> int:
    rc = _load_run_config(args)
    out = Path(rc.run.out_dir) if rc.run.out_dir else out_root() / f"train_seed{rc.run.seed}"
    env = PointMassEnv(rc.env)
    summary = agents.train(env, rc.agent, out, rc.run.total_frames,
                           timestamps=rc.run.timestamps)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    arrays, extra = nm.load_checkpoint(args.checkpoint)
    agent_cfg, env_cfg = config_from_dicts(extra["agent_config"], extra["env_config"])
    agent = agents.Agent(agent_cfg, env_cfg)
    agent.load(args.checkpoint)
    result = agents.evaluate(agent, env_cfg, args.episodes, eval_seed=args.seed or 123)
    print(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_toy(args) -> int:
    out = Path(args.out) if args.out else out_root() / "toy"
    out.mkdir(parents=True, exist_ok=True)
    table = toylab.run_table1(seeds=args.seeds, flavor=args.flavor,
                              out_path=out / "table.json",
                              eval_episodes=args.eval_episodes)
    print(toylab.format_table(table), end="")
    print(f"written: {out / 'table.json'} and {out / 'table.txt'}")
    return EXIT_OK


def cmd_maskdemo(args) -> int:
    out = Path(args.out) if args.out else out_root() / "maskdemo"
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = EnvConfig(image_size=args.image_size, seed=args.seed or 0)
    env = PointMassEnv(env_cfg)
    env.reset()
    for _ in range(5):
        env.step(env.rng.uniform(-1, 1, 2))
    rgb, mask = render(env.state, env_cfg)
    pipeline = masktools.MaskPipelineConfig().validate()
    hi_cfg = EnvConfig(image_size=args.image_size * pipeline.render_scale)
    _, hi_mask = render(env.state, hi_cfg)
    rng = Rng(args.seed or 0).split("maskdemo")
    write_ppm(out / "frame.ppm", (rgb.transpose(1, 2, 0) * 255).astype(np.uint8))
    write_pgm(out / "mask_clean.pgm", mask)
    write_pgm(out / "mask_preprocessed.pgm", masktools.preprocess(hi_mask, pipeline))
    write_pgm(out / "mask_noisy.pgm", masktools.add_noise(mask, args.noise_p, rng))
    write_pgm(out / "mask_approximate.pgm", masktools.approximate(mask, pipeline))
    joints = env.joint_pixels()
    write_pgm(out / "mask_joint_patches.pgm",
              masktools.joint_patches(joints, pipeline.joint_patch_radius, mask.shape))
    print(f"written 6 images to {out}")
    return EXIT_OK


def cmd_activations(args) -> int:
    out = Path(args.out) if args.out else out_root() / "activations"
    paths = analysis.dump_activations(args.checkpoint, out, seed=args.seed)
    print(f"written {len(paths)} images to {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    runs = []
    for mpath in args.metrics:
        xs, ys = [], []
        with open(mpath) as fp:
            for line in fp:
                rec = json.loads(line)
                if args.key in rec:
                    xs.append(rec["step"])
                    ys.append(rec[args.key])
        if xs:
            runs.append((np.asarray(xs, float), np.asarray(ys, float)))
    if not runs:
        raise ConfigError(f"no records with key {args.key!r} in {args.metrics}")
    if len(runs) == 1:
        series = [{"x": runs[0][0], "y": runs[0][1], "label": args.key}]
    else:
        grid, mean, lo, hi = plotting.aggregate_runs(runs)
        series = [{"x": grid, "y": mean, "band": (lo, hi),
                   "label": f"{args.key} ({len(runs)} runs)"}]
    out = Path(args.out) if args.out else out_root() / f"{args.key}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    path = plotting.plot_curves(series, out, title=args.key, xlabel="step",
                                ylabel=args.key)
    print(f"written {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskrl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("toy", help="run the noise-condition planning comparison")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--flavor", choices=["quadratic", "mlp"], default="quadratic")
    p.add_argument("--eval-episodes", type=int, default=20)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(fn=cmd_toy)

    p = sub.add_parser("maskdemo", help="render clean and corrupted masks")
    p.add_argument("--image-size", type=int, default=84)
    p.add_argument("--noise-p", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(fn=cmd_maskdemo)

    p = sub.add_parser("activations", help="dump encoder activation maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(fn=cmd_activations)

    p = sub.add_parser("plot", help="line plots from metrics files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--key", type=str, default="eval_success")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EnvConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RuntimeError, OSError) as exc:
        print(f"environment failure: {exc}", file=sys.stderr)
        return EXIT_ENV


if __name__ == "__main__":
    sys.exit(main())
