"""Command-line entry point: ``scmn <command> [options]``."""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from app.config import Settings, load_settings
from app.core.errors import ConfigError, ScmnError
from app.core.logging import configure_logging, get_logger
from app.core.seeds import derive_seed

logger = get_logger("cli")

GRAD_TOLERANCE = 1e-4


def _parse_set(pairs: List[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip().lower()] = value.strip()
    return values


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values that override the config file; unset flags are skipped"""
    values: Dict[str, Any] = _parse_set(args.set)
    mapping = {
        "seed": "seed",
        "eta": "shuffle_eta",
        "epochs": "epochs",
        "lr": "learning_rate",
        "lam": "equivariant_weight",
        "mu": "stair_scale",
        "optimizer": "optimizer",
        "batch_size": "batch_size",
        "workers": "train_workers",
        "n_train": "n_train",
        "n_test": "n_test",
        "log_level": "log_level",
        "log_format": "log_format",
    }
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = value
    if getattr(args, "global_shuffle", False):
        values["use_global_shuffle"] = True
        values["use_local_shuffle"] = False
    if getattr(args, "no_local_shuffle", False):
        values["use_local_shuffle"] = False
    if getattr(args, "no_matching", False):
        values["use_matching"] = False
    if getattr(args, "across", False):
        values["use_across_transformer"] = True
    return values


def _checkpoint_path(args: argparse.Namespace, settings: Settings) -> Path:
    if getattr(args, "checkpoint", None):
        return Path(args.checkpoint)
    return Path(settings.checkpoint_path or settings.run_dir / "model.ckpt")


def cmd_gen_data(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.dataset import gen_dataset

    manifest = gen_dataset(settings, out_dir=Path(args.out or settings.data_dir))
    print(f"wrote {len(manifest.entries)} images to {manifest.root}")
    return 0


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.dataset import load_manifest
    from app.services.training import train

    run_dir = Path(args.run_dir or settings.run_dir)
    if args.checkpoint:
        settings = settings.model_copy(update={"checkpoint_path": Path(args.checkpoint)})
    manifest = load_manifest(Path(args.data or settings.data_dir))
    _, history = train(settings, manifest, run_dir=run_dir,
                       checkpoint_every_epoch=args.checkpoint_every_epoch)
    first, last = history[0], history[-1]
    print(f"steps={len(history)} initial_loss={first.l_total:.6f} final_loss={last.l_total:.6f}")
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.checkpoint import load_checkpoint
    from app.services.dataset import load_manifest
    from app.services.inference import evaluate

    params = load_checkpoint(_checkpoint_path(args, settings), settings)
    manifest = load_manifest(Path(args.data or settings.data_dir))
    scores = evaluate(params, manifest, settings, out_dir=Path(args.out or settings.run_dir),
                      dagger=args.dagger)
    print(f"{'metric':<14}{'value':>10}")
    for name in ("top1_loc", "top5_loc", "gt_known_loc", "top1_cls", "mean_iou"):
        print(f"{name:<14}{getattr(scores, name):>10.4f}")
    print(f"{'images':<14}{scores.count:>10d}")
    return 0


def cmd_infer(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.checkpoint import load_checkpoint
    from app.services.imaging import read_ppm, write_heatmap
    from app.services.inference import run_inference
    from app.services.tensor import Tensor

    params = load_checkpoint(_checkpoint_path(args, settings), settings)
    image = Tensor(read_ppm(args.image, settings.channels))
    result = run_inference(image, params, settings, dagger=args.dagger)
    names = settings.class_names
    if args.heatmap:
        write_heatmap(args.heatmap, result.heatmap)
    print(json.dumps({
        "ranked_classes": [names[k] for k in result.ranked_classes],
        "box": list(result.box.as_tuple()),
        "heatmap": str(args.heatmap) if args.heatmap else None,
    }))
    return 0


def cmd_match_demo(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.checkpoint import load_checkpoint
    from app.services.dataset import render_example
    from app.services.diagnostics import match_demo
    from app.services.imaging import read_ppm

    if args.image:
        image = read_ppm(args.image, settings.channels)
    else:
        rng = np.random.default_rng(derive_seed(settings.seed, args.label))
        image, _ = render_example(args.label, settings.image_size, settings.channels, rng)
    params = load_checkpoint(args.checkpoint, settings) if args.checkpoint else None
    report = match_demo(settings, image, args.label, settings.seed, params=params,
                        out_dir=Path(args.out))
    print(f"marginal_error={report.marginal_error:.3e} objective={report.objective:.6f} "
          f"iterations={report.iterations} converged={report.converged}")
    print(f"shuffled_blocks={report.shuffled_blocks} flow={report.flow_path}")
    return 0


def cmd_grad_check(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.diagnostics import (
        matching_grad_check,
        op_grad_checks,
        pipeline_grad_check,
        toy_settings,
    )

    seed = settings.seed
    errors = op_grad_checks(seed=seed)
    errors["refine(sinkhorn)"] = matching_grad_check(seed=seed)
    errors["full_loss"] = pipeline_grad_check(toy_settings(use_across_transformer=args.across), seed=seed)
    failed = 0
    for name, error in errors.items():
        ok = error <= GRAD_TOLERANCE
        failed += not ok
        print(f"{name:<20}{error:>12.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    from app.services.ablation import ablation_run, format_report, resolve_arms
    from app.services.dataset import load_manifest

    arms = resolve_arms([a for a in (args.arms or "").split(",") if a])
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from e
    manifest = load_manifest(Path(args.data or settings.data_dir))
    report = ablation_run(settings, manifest, arms, seeds, Path(args.out or settings.run_dir / "ablation"))
    print(format_report(report))
    return 0


def cmd_serve(args: argparse.Namespace, settings: Settings) -> int:
    import uvicorn

    from app.services.inference import inference_service

    inference_service.settings = settings
    uvicorn.run(
        "app.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override any setting, repeatable")
    common.add_argument("--log-level", dest="log_level")
    common.add_argument("--log-format", dest="log_format", choices=["json", "console"])

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--eta", type=float, help="per-block shuffle probability")
    training.add_argument("--global-shuffle", action="store_true")
    training.add_argument("--no-local-shuffle", action="store_true")
    training.add_argument("--no-matching", action="store_true")
    training.add_argument("--across", action="store_true", help="enable the across-transformer")
    training.add_argument("--mu", type=float, help="stair scale")

    parser = argparse.ArgumentParser(prog="scmn", description="Semantic-constraint matching localization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="render the synthetic shapes dataset")
    p.add_argument("--out", type=Path)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common, training], help="train on the train split")
    p.add_argument("--data", type=Path)
    p.add_argument("--run-dir", dest="run_dir", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", dest="lam", type=float, help="equivariant loss weight")
    p.add_argument("--optimizer", choices=["sgd", "adamw"])
    p.add_argument("--workers", type=int, help="gradient worker processes, 0 for one per core")
    p.add_argument("--checkpoint-every-epoch", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score the test split")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--dagger", action="store_true", help="across-transformer at inference")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="localize one PPM image")
    p.add_argument("image", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--heatmap", type=Path, help="write the heatmap as PGM")
    p.add_argument("--dagger", action="store_true")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("match-demo", parents=[common, training], help="solve one pair's matching")
    p.add_argument("--image", type=Path)
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--out", type=Path, default=Path("match_demo"))
    p.set_defaults(handler=cmd_match_demo)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--across", action="store_true")
    p.set_defaults(handler=cmd_grad_check)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation arms")
    p.add_argument("--data", type=Path)
    p.add_argument("--arms", help="comma-separated arm names, default all")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    try:
        settings = load_settings(args.config, _overrides(args))
        configure_logging(settings.log_level, settings.log_format)
        return args.handler(args, settings)
    except (ScmnError, argparse.ArgumentTypeError) as e:
        logger.error("command_failed", command=args.command, error=str(e), kind=type(e).__name__)
        return 2


if __name__ == "__main__":
    sys.exit(main())
