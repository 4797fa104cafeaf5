"""Command-line entry point (``depthprompt``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import __version__
from ..core import compute_metrics, read_raster, write_raster
from ..errors import DepthPromptError
from ..propagation import PropagationConfig, normalize_affinity, propagate, read_affinity
from ..scale import apply_scale, fit_scale
from .config import RunConfig, load_config

log = logging.getLogger("depthprompt")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict, out: Path | None, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        (out / name).write_text(text + "\n")


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    from .corpus import generate_corpus

    cfg = _run_config(args)
    out = _out_dir(args, cfg.corpus)
    manifest = generate_corpus(out, cfg.scene, cfg.splits)
    print(f"wrote {len(manifest['scenes'])} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = _run_config(args)
    if args.out:
        cfg = cfg.with_(checkpoint=args.out)
    if args.epochs is not None:
        cfg = cfg.with_(epochs=args.epochs)
    if args.variant:
        cfg = cfg.with_(variant=args.variant)
    result = train(cfg)
    print(json.dumps({"checkpoint": str(result.checkpoint), "probe_losses": result.probe_losses,
                      "trainable_fraction": result.trainable_fraction}, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .training import open_corpus

    cfg = _run_config(args)
    report = evaluate(args.checkpoint, cfg.test_spec, open_corpus(cfg), args.split)
    _emit(report.to_dict(), _out_dir(args, ".") if args.out else None, "metrics.json")
    return 0


def cmd_bias_study(args) -> int:
    from .study import StudyConfig, run_bias_study, train_study

    if args.config:
        data = json.loads(Path(args.config).read_text())
        cfg = StudyConfig.from_dict(data, out=args.out or "study")
    else:
        cfg = StudyConfig(out=args.out or "study")
    if args.out:
        cfg = StudyConfig(cfg.base, cfg.seeds, cfg.runs, cfg.tests, args.out)
    if args.seed is not None or args.n_seeds is not None:
        first = args.seed if args.seed is not None else cfg.seeds[0]
        n = args.n_seeds if args.n_seeds is not None else len(cfg.seeds)
        cfg = StudyConfig(cfg.base, tuple(range(first, first + n)), cfg.runs, cfg.tests, cfg.out)
    if args.epochs is not None:
        cfg = StudyConfig(cfg.base.with_(epochs=args.epochs), cfg.seeds, cfg.runs, cfg.tests, cfg.out)
    timing = {} if args.no_train else train_study(cfg)
    report = run_bias_study(cfg, timing=timing)
    for name, t in report.trends.items():
        print(f"{name:16s} held {t['held']}/{len(cfg.seeds)}  {'PASS' if t['passed'] else 'FAIL'}  {t['description']}")
    print(f"report: {Path(cfg.out) / 'report.json'}")
    return 0


def cmd_propagate(args) -> int:
    initial = read_raster(args.initial, args.format)
    seeds = read_raster(args.seeds, args.format)
    affinity = read_affinity(args.affinity)
    if not args.normalized:
        affinity = normalize_affinity(affinity)
    cfg = PropagationConfig(n_steps=args.steps, seed_reinjection=not args.no_reinject)
    out = propagate(initial, seeds, affinity, cfg, backend=args.backend)
    path = _out_dir(args, ".") / args.output_name
    write_raster(out, path, args.format)
    print(path)
    return 0


def cmd_scale_fit(args) -> int:
    rel = read_raster(args.relative, args.format)
    sparse = read_raster(args.sparse, args.format)
    fit = fit_scale(rel, sparse)
    out = _out_dir(args, ".") if args.out else None
    if out is not None:
        write_raster(apply_scale(rel, fit), out / "scaled.dpr")
    _emit(json.loads(fit.to_json()), out, "scale.json")
    return 0


def cmd_metrics(args) -> int:
    pred = read_raster(args.pred, args.format)
    gt = read_raster(args.gt, args.format)
    report = compute_metrics(pred, gt, args.min_depth, args.max_depth)
    _emit(report.to_dict(), _out_dir(args, ".") if args.out else None, "metrics.json")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # given before or after the subcommand; the subcommand copies must not reset them
        g = argparse.ArgumentParser(add_help=False, argument_default=default)
        g.add_argument("--config", help="RunConfig JSON (bias-study: StudyConfig JSON)")
        g.add_argument("--seed", type=int, help="override the config seed")
        g.add_argument("--out", help="output directory")
        g.add_argument("-v", "--verbose", action="store_true")
        return g

    common = global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="depthprompt", description="Sensor-agnostic depth completion toolkit.",
                                parents=[global_flags(None)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = dict(choices=["float32-raster", "png16-mm"], default="float32-raster")

    s = sub.add_parser("generate", parents=[common], help="render the synthetic corpus")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("train", parents=[common], help="train one completion model")
    s.add_argument("--epochs", type=int)
    s.add_argument("--variant")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a corpus split")
    s.add_argument("checkpoint")
    s.add_argument("--split", default="test")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("bias-study", parents=[common], help="train and score the sensor-bias study")
    s.add_argument("--n-seeds", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--no-train", action="store_true", help="only evaluate existing checkpoints")
    s.set_defaults(fn=cmd_bias_study)

    s = sub.add_parser("propagate", parents=[common], help="run spatial propagation on rasters")
    s.add_argument("initial")
    s.add_argument("seeds")
    s.add_argument("affinity")
    s.add_argument("--steps", type=int, default=PropagationConfig().n_steps)
    s.add_argument("--no-reinject", action="store_true")
    s.add_argument("--normalized", action="store_true", help="affinity is already normalized")
    s.add_argument("--backend", choices=["numba", "numpy"])
    s.add_argument("--format", **fmt)
    s.add_argument("--output-name", default="propagated.dpr")
    s.set_defaults(fn=cmd_propagate)

    s = sub.add_parser("scale-fit", parents=[common], help="least-squares scale of relative to sparse depth")
    s.add_argument("relative")
    s.add_argument("sparse")
    s.add_argument("--format", **fmt)
    s.set_defaults(fn=cmd_scale_fit)

    s = sub.add_parser("metrics", parents=[common], help="RMSE / MAE / DELTA1 of a prediction")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--min-depth", type=float, default=1e-3)
    s.add_argument("--max-depth", type=float, default=float("inf"))
    s.add_argument("--format", **fmt)
    s.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (DepthPromptError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
