"""Command-line entry point: ``dino-unet {synth,train,eval,predict,gradcheck,params}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import audit, container
from .config import ConfigError, RunConfig
from .container import Entry
from .data import load_dataset, make_synth_dataset, save_dataset
from .decoder import predict_mask
from .inference import sliding_window_infer
from .metrics import evaluate_masks
from .train import TrainingDiverged, load_checkpoint, save_checkpoint, train_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with one-line diagnostics instead of usage dumps."""

    def error(self, message):
        print(f"error: {self.prog}: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_synth(args) -> int:
    samples = make_synth_dataset(args.n, args.size, args.classes, args.seed)
    save_dataset(samples, args.out, meta={"n": args.n, "size": args.size, "classes": args.classes,
                                          "seed": args.seed})
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _load_run_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    for flag, attr in (("epochs", "epochs"), ("steps_per_epoch", "steps_per_epoch"), ("lr", "lr0"),
                       ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(run.train, attr, value)
    if getattr(args, "seed", None) is not None:
        run.model.seed = args.seed
        run.train.seed = args.seed
    run.train.validate()
    return run


def cmd_train(args) -> int:
    run = _load_run_config(args)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(run.dumps(), encoding="utf-8")
    try:
        result = train_model(run.model, data, run.train)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(out / "checkpoint.dunt", result.model, run.train)
    (out / "loss_log.tsv").write_text(result.loss_log(), encoding="utf-8")
    print(f"trained {len(result.losses)} steps; final loss {result.losses[-1].total:.6f}")
    return EXIT_OK


def _infer(model, images: np.ndarray, window: int, overlap: float) -> np.ndarray:
    if window:
        return sliding_window_infer(model.predict_logits, images, window, overlap)
    return model.predict_logits(images)


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    preds = []
    for s in data:
        logits = _infer(model, s.image[None].astype(model.dtype), args.window, args.overlap)
        preds.append(predict_mask(logits)[0])
    report = evaluate_masks(preds, [s.mask for s in data], model.cfg.decoder.num_classes,
                            [s.sample_id for s in data])
    text = report.to_tsv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in data:
        logits = _infer(model, s.image[None].astype(model.dtype), args.window, args.overlap)
        mask = predict_mask(logits)[0].astype("<i4")
        container.save(out / f"{s.sample_id}.dunt", [Entry("mask", mask)])
    print(f"wrote {len(data)} masks to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import ALL_NAMES, run_suite

    names = [args.module] if args.module else None
    if args.module and args.module not in ALL_NAMES:
        raise UsageError(f"unknown module {args.module!r}; choose from {', '.join(ALL_NAMES)}")
    reports = run_suite(names, seed=args.seed, instances=args.instances)
    print("check\tstatus\tmax_rel_err")
    for r in reports:
        print(r)
    failed = [r for r in reports if not r.passed]
    return EXIT_GRADCHECK if failed else EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_params(args) -> int:
    from .model import build_model

    run = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = run.model
    counted = audit.count_params(build_model(cfg).params)
    sys.stdout.write(counted.to_tsv())
    if args.compare_baseline:
        f = cfg.fapm
        n = len(f.out_dims)
        fapm_n = audit.fapm_param_formula(f.in_dim, f.rank, n, f.out_dims, f.dw_kernel, f.se_reduction)
        base_n = audit.baseline_param_formula(f.in_dim, f.out_dims)
        print(f"fapm_params\t{fapm_n}")
        print(f"baseline_params\t{base_n}")
        if args.dgrid:
            rep = audit.crossover_report(f.rank, n, f.out_dims, args.dgrid, f.dw_kernel, f.se_reduction)
            sys.stdout.write(rep.to_tsv())
            if args.plot_out:
                Path(args.plot_out).write_text(rep.to_plot_description(), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dino-unet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "write a per-class Dice/HD95 report"),
                              ("predict", cmd_predict, "write predicted masks")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--window", type=int, default=0, help="sliding-window size; 0 = full image")
        s.add_argument("--overlap", type=float, default=0.5)
        s.add_argument("--out", required=(name == "predict"))
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--module")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--instances", type=int, default=3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("params", help="activated-parameter audit")
    s.add_argument("--config")
    s.add_argument("--compare-baseline", action="store_true")
    s.add_argument("--dgrid", type=_int_list)
    s.add_argument("--plot-out")
    s.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail(f"file not found: {exc.filename}", EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
