"""Command-line front end.

Subcommands: gen-synth, corrupt, train, eval, param-count, gradcheck.
Failures print one line ``error: <kind>: <message>`` to stderr and exit
non-zero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adl import TrainConfig, train
from .arch import ArchConfig, build_model, param_count
from .dataset import DatasetManifest, corrupt_dataset, gen_synth, load_split, schedule_noise
from .formats import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import evaluate, mean_report
from .noise import KINDS, NoiseSpec

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CLIError("usage", message, EXIT_USAGE)


def load_config_file(path) -> tuple:
    """Read ``{"arch": {...}, "train": {...}}``; unknown keys anywhere are errors."""
    if path is None:
        return {}, {}
    body = json.loads(Path(path).read_text())
    if not isinstance(body, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(body) - {"arch", "train"}
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")
    return body.get("arch", {}), body.get("train", {})


def _arch_from_args(args, arch: dict) -> ArchConfig:
    arch = dict(arch)
    for flag, key in (
        ("residual_encoders", "use_residual_encoders"),
        ("residual_skips", "use_residual_skips"),
        ("attention", "use_attention_decoders"),
        ("base_channels", "base_channels"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            arch[key] = value
    return ArchConfig.from_dict(arch)


def _add_arch_flags(p):
    p.add_argument("--config", help="JSON file with 'arch' and/or 'train' sections")
    p.add_argument("--residual-encoders", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--residual-skips", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--attention", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--base-channels", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rarunet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic blob dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("corrupt", help="replace a proportion of training masks with noisy labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--kinds", default=",".join(KINDS))
    p.add_argument("--tolerance", type=float, default=0.03)
    p.add_argument("--sigma-e", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model, writing checkpoint, ledger and summary")
    p.add_argument("--manifest", required=True)
    _add_arch_flags(p)
    p.add_argument("--adl", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--report", required=True)
    p.add_argument("--oracle-self", action="store_true",
                   help="debug: score the split's own masks against themselves")

    p = sub.add_parser("param-count", help="print the number of trainable parameters")
    _add_arch_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation and a toy model")
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def cmd_gen_synth(args) -> int:
    m = gen_synth(args.n, args.size, args.seed, args.out)
    print(Path(args.out) / "manifest.json", len(m.records))
    return 0


def cmd_corrupt(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    specs = [NoiseSpec(k, args.alpha, args.tolerance, args.seed, args.sigma_e) for k in kinds]
    manifest, records = corrupt_dataset(manifest, args.beta, specs, args.seed)
    manifest.save(args.manifest)
    corrupted = [r for r in records if r.corrupted]
    infeasible = sum(r.infeasible for r in corrupted)
    print(f"corrupted {len(corrupted)} of {len(records)} training masks ({infeasible} flagged infeasible)")
    return 0


def cmd_train(args) -> int:
    arch_d, train_d = load_config_file(args.config)
    arch = _arch_from_args(args, arch_d)
    train_d = dict(train_d)
    for flag, key in (("adl", "adl_enabled"), ("augment", "augment"), ("epochs", "epochs"),
                      ("batch_size", "batch_size"), ("lr", "learning_rate"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            train_d[key] = value
    cfg = TrainConfig.from_dict(train_d)
    manifest = DatasetManifest.load(args.manifest)
    alpha, beta = schedule_noise(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(arch, seed=cfg.seed)
    result = train(model, load_split(manifest, "train"), load_split(manifest, "val"), cfg, alpha, beta)
    ckpt = Checkpoint.from_model(result.model, epoch=result.best_epoch,
                                 val_dice=round(result.best_val_dice, 6), seed=cfg.seed)
    save_checkpoint(out / "checkpoint.raru", ckpt)
    result.ledger.write_csv(out / "ledger.csv")
    summary = dict(result.summary, arch=arch.to_dict(), train=cfg.to_dict())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch} val dice {result.best_val_dice:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    data = load_split(manifest, args.split, original=True)
    if not len(data):
        raise CLIError("data", f"split {args.split!r} is empty")
    gts = data.masks[:, 0] > 0.5
    if args.oracle_self:
        preds = gts
    else:
        model = load_checkpoint(args.checkpoint).to_model()
        preds = model.predict(data.images)[:, 0] >= 0.5
    report = mean_report(evaluate(p, g) for p, g in zip(preds, gts))
    Path(args.report).write_text(report.to_json())
    print(report.to_json(), end="")
    return 0


def cmd_param_count(args) -> int:
    arch_d, _ = load_config_file(args.config)
    print(param_count(_arch_from_args(args, arch_d)))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite()
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{status:4s} {name:32s} {err:.3e}")
        worst = max(worst, err)
    if worst >= args.tolerance:
        raise CLIError("gradcheck", f"max relative error {worst:.3e} >= {args.tolerance:g}")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "eval": cmd_eval,
    "param-count": cmd_param_count,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except CLIError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, KeyError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
