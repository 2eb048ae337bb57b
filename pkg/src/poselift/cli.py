"""Command-line entry point: ``poselift {synth,train,eval,infer,inspect,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .accounting import CONVENTIONS, count_macs
from .data import ACTION_TEMPLATES, Pose3DSequence, SequenceFormatError, load_sequence, save_sequence, write_synthetic_dataset
from .graph import SkeletonError
from .model import VARIANTS, ModelConfig, load_checkpoint
from .reports import emit_report, plot_training_log, write_json

log = logging.getLogger("poselift")


class UsageError(ValueError):
    """Bad input detected after argument parsing (exit status 1)."""


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _overrides(args: argparse.Namespace, mapping: dict[str, str]) -> dict:
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


def _model_config(args: argparse.Namespace, doc: dict) -> ModelConfig:
    d = dict(doc.get("model", {}))
    variant = args.variant or d.pop("variant", None)
    if variant:
        if variant.upper() not in VARIANTS:
            raise UsageError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        d["depth"], d["dim"], d["frames"] = VARIANTS[variant.upper()]
    d.update(_overrides(args, {"depth": "depth", "dim": "dim", "frames": "frames", "heads": "heads", "mode": "composition_mode"}))
    try:
        return ModelConfig.from_dict(d)
    except TypeError as exc:
        raise UsageError(f"invalid model config: {exc}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    doc = _read_config(args.config)
    settings = {"num_sequences": 8, "frames": 243, "noise_px": 0.0, "actions": list(ACTION_TEMPLATES), "fps": 50.0}
    unknown = set(doc) - set(settings)
    if unknown:
        raise UsageError(f"unknown synth config keys: {sorted(unknown)}")
    settings.update(doc)
    settings.update(_overrides(args, {"sequences": "num_sequences", "frames": "frames", "noise_px": "noise_px"}))
    for a in settings["actions"]:
        if a not in ACTION_TEMPLATES:
            raise UsageError(f"unknown action {a!r}; expected one of {sorted(ACTION_TEMPLATES)}")
    manifest = write_synthetic_dataset(
        args.out,
        int(settings["num_sequences"]),
        int(settings["frames"]),
        seed=args.seed,
        noise_px=float(settings["noise_px"]),
        actions=tuple(settings["actions"]),
        fps=float(settings["fps"]),
    )
    print(f"wrote {len(manifest.entries)} sequence pairs to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .train import TrainConfig, train_run

    doc = _read_config(args.config)
    cfg = _model_config(args, doc)
    t = dict(doc.get("train", {}))
    t.update(
        _overrides(
            args,
            {
                "epochs": "epochs",
                "batch_size": "batch_size",
                "lr": "lr_init",
                "lr_decay": "lr_decay",
                "weight_decay": "weight_decay",
                "max_steps": "max_steps",
                "grad_clip": "grad_clip",
            },
        )
    )
    if args.lambda_velocity is not None:
        t["loss"] = {"lambda_velocity": args.lambda_velocity}
    if args.no_flip_augment:
        t["flip_augment"] = False
    if args.tta_flip is not None:
        t["tta_flip"] = args.tta_flip
    t["seed"] = args.seed
    try:
        tcfg = TrainConfig.from_dict(t)
    except TypeError as exc:
        raise UsageError(f"invalid train config: {exc}") from None
    data = _existing(args.data, "dataset manifest")
    eval_data = _existing(args.eval_data, "eval manifest") if args.eval_data else None
    result = train_run(cfg, tcfg, data, args.out, eval_data)
    out = Path(args.out)
    write_json({"model": cfg.to_dict(), "train": tcfg.to_dict()}, out / "run_config.json")
    if args.plot:
        plot_training_log(result.log, out / "train_log.svg")
    best = result.log[result.best_epoch]
    print(f"trained {result.steps} steps; best epoch {result.best_epoch} P1 {best['eval_p1']:.2f} mm")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .train import evaluate

    ckpt = _existing(args.checkpoint, "checkpoint")
    data = _existing(args.data, "dataset manifest")
    cfg, _, _ = load_checkpoint(ckpt)
    report = evaluate(ckpt, data, tta_flip=args.tta_flip, workers=args.workers)
    report.metadata.update({"checkpoint": ckpt.name, "tta_flip": args.tta_flip})
    emit_report(report, args.out, joint_names=cfg.skeleton.joint_names, timestamp=not args.no_timestamp)
    print(f"P1 {report.mpjpe_mm:.2f} mm  P2 {report.p_mpjpe_mm:.2f} mm  PCK {report.pck_pct:.1f}%  AUC {report.auc_pct:.1f}%")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    from .train import predict_sequence

    cfg, store, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    seq = load_sequence(_existing(args.input, "input sequence"), cfg.skeleton)
    if seq.kind != "2d":
        raise UsageError(f"{args.input}: expected a 2d sequence, got {seq.kind}")
    if seq.frames < cfg.frames:
        raise UsageError(f"{args.input}: {seq.frames} frames, model window is {cfg.frames}")
    pred = predict_sequence(seq.data, cfg, store, tta_flip=args.tta_flip)
    save_sequence(Pose3DSequence(pred, seq.fps, seq.action), args.out)
    print(f"wrote {seq.frames} frames to {args.out}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    if args.variant is None and args.config is None:
        raise UsageError("inspect needs --variant or --config")
    cfg = _model_config(args, _read_config(args.config))
    rep = count_macs(cfg, args.convention)
    width = max(len(k) for k, _ in rep.breakdown)
    lines = [f"{'module':<{width}}  {'MACs':>16}"]
    lines += [f"{k:<{width}}  {v:>16,d}" for k, v in rep.breakdown]
    lines.append(f"{'total':<{width}}  {rep.total_macs:>16,d}")
    print("\n".join(lines))
    print(rep.pretty())
    print(json.dumps(rep.to_dict(), sort_keys=True))
    if args.out:
        emit_report(rep, args.out, stem="cost", timestamp=False)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.module, seed=args.seed, trials=args.trials)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<40} max rel err {r.max_rel_err:.2e} (tol {r.tol:.0e})")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=sorted(VARIANTS), type=str.upper)
    p.add_argument("--depth", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--mode", help="composition mode")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="controls all randomness (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="poselift", description="2D-to-3D pose lifting toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--noise-px", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model from a dataset manifest")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="training manifest.json")
    p.add_argument("--eval-data", help="evaluation manifest (defaults to the training set)")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lambda-velocity", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--no-flip-augment", action="store_true")
    p.add_argument("--tta-flip", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--plot", action="store_true", help="also write train_log.svg")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tta-flip", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timestamp", action="store_true", help="omit metadata.generated_at")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="lift one 2D sequence file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tta-flip", action=argparse.BooleanOptionalAction, default=False)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect", parents=[common], help="parameter and MAC counts")
    p.add_argument("--config")
    _add_model_flags(p)
    p.add_argument("--convention", choices=CONVENTIONS, default="linear")
    p.add_argument("--out", help="also write cost.json and breakdown.csv here")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--module", choices=("tensor", "loss", "model", "all"), default="all")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, SequenceFormatError, SkeletonError, ValueError, OSError) as exc:
        print(f"poselift {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
