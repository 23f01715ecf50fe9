"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime
failure. The --threads flags fall back to the HSCF_THREADS environment
variable, then to 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import build_analysis, export_connections_csv, export_report, evaluate_task
from .data import Task, load_cohort, save_cohort, split_cohort
from .errors import HscfError, ValidationError
from .gradcheck import run_full_check
from .model import load_checkpoint, save_checkpoint
from .synthetic import generate_synthetic_cohort
from .train import TrainConfig, fit


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("HSCF_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"HSCF_THREADS must be an integer, got '{env}'") from None
    if value < 1:
        raise ValidationError(f"thread count must be >= 1, got {value}")
    return value


def _build_parser() -> _Parser:
    parser = _Parser(prog="hscf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[], help="write a synthetic cohort directory")
    gen.add_argument("--out", required=True, help="output cohort directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--subjects-per-class", type=int, default=76)
    gen.add_argument("--rois", type=int, default=90)
    gen.add_argument("--signal", type=float, default=0.4,
                     help="planted class-mean edge difference (0 disables)")

    tr = sub.add_parser("train", help="train a model on a cohort directory")
    tr.add_argument("--data", required=True, help="cohort directory or manifest path")
    tr.add_argument("--out", required=True, help="checkpoint path to write")
    tr.add_argument("--config", help="JSON file with TrainConfig fields")
    tr.add_argument("--task", choices=[t.value for t in Task])
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--eval-every", type=int)
    tr.add_argument("--train-fraction", type=float)
    tr.add_argument("--threads", type=int)
    tr.add_argument("--kl-weight", type=float)
    tr.add_argument("--rec-weight", type=float)
    tr.add_argument("--cos-weight", type=float)
    tr.add_argument("--cls-weight", type=float)
    tr.add_argument("--separate-universal", action="store_true", default=None,
                    help="give the functional modality its own universal encoder")
    tr.add_argument("--report", help="training report path (default: <out stem>.report.jsonl)")
    tr.add_argument("--no-figures", action="store_true", help="skip loss-curve rendering")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a cohort")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--task", choices=[t.value for t in Task],
                    help="defaults to the task recorded in the checkpoint")
    ev.add_argument("--split", choices=["test", "all"], default="test",
                    help="'test' re-derives the held-out split recorded in the "
                         "checkpoint; 'all' evaluates every matching subject")
    ev.add_argument("--threads", type=int)

    an = sub.add_parser("analyze", help="connectivity-difference report across stages")
    an.add_argument("--ckpt", required=True)
    an.add_argument("--data", required=True)
    an.add_argument("--out", required=True, help="analysis JSON path")
    an.add_argument("--quantile", type=float, default=0.75)
    an.add_argument("--top-k", type=int, default=5)
    an.add_argument("--source", choices=["generated", "inputs"], default="generated",
                    help="difference of generated matrices or of raw input means")
    an.add_argument("--quantile-mode", choices=["abs", "per-direction"], default="abs")
    an.add_argument("--threads", type=int)
    an.add_argument("--no-figures", action="store_true")

    gc = sub.add_parser("gradcheck", help="verify analytic gradients at toy scale")
    gc.add_argument("--rois", type=int, default=6)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--separate-universal", action="store_true")
    return parser


def _cmd_generate(args) -> int:
    cohort = generate_synthetic_cohort(
        seed=args.seed,
        n_per_class=args.subjects_per_class,
        n_rois=args.rois,
        signal=args.signal,
    )
    manifest = save_cohort(cohort, args.out)
    print(f"wrote {manifest} ({len(cohort)} subjects, {cohort.n_rois} ROIs)")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    config = config.override(
        task=args.task,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        eval_every=args.eval_every,
        train_fraction=args.train_fraction,
        threads=args.threads,
        kl_weight=args.kl_weight,
        rec_weight=args.rec_weight,
        cos_weight=args.cos_weight,
        cls_weight=args.cls_weight,
        separate_universal=args.separate_universal,
    )
    if args.threads is None and "HSCF_THREADS" in os.environ:
        config = config.override(threads=_resolve_threads(None))
    return config


def _cmd_train(args) -> int:
    config = _train_config_from_args(args)
    cohort = load_cohort(args.data)

    def log(record):
        line = f"epoch {record.epoch}: total {record.losses.total:.5f}"
        if record.metrics is not None and record.metrics.acc is not None:
            line += f", held-out acc {record.metrics.acc:.4f}"
        print(line, file=sys.stderr)

    result = fit(config, cohort, log=log)
    out = Path(args.out)
    save_checkpoint(out, result.model, extra_config=config.to_dict())
    stem = out.parent / (out.name[: -len(out.suffix)] if out.suffix else out.name)
    report_path = Path(args.report) if args.report else Path(f"{stem}.report.jsonl")
    result.report.write_jsonl(report_path)
    csv_path = Path(f"{stem}.report.csv")
    result.report.write_csv(csv_path)
    print(f"wrote {out}")
    print(f"wrote {report_path}")
    print(f"wrote {csv_path}")
    if not args.no_figures:
        from .figures import plot_loss_curves

        fig_path = plot_loss_curves(
            [r.as_dict() for r in result.report.records], Path(f"{stem}.losses.png")
        )
        print(f"wrote {fig_path}")
    if result.final_eval is not None:
        print(json.dumps({**result.final_eval.metrics.as_dict(),
                          "counts": result.final_eval.counts.as_dict()}))
    return 0


def _cmd_eval(args) -> int:
    model, config = load_checkpoint(args.ckpt)
    cohort = load_cohort(args.data)
    task = Task.from_string(args.task or config.get("task", ""))
    if args.split == "test":
        for key in ("train_fraction", "seed"):
            if key not in config:
                raise ValidationError(
                    f"checkpoint lacks '{key}' needed to re-derive the held-out split; "
                    "use --split all"
                )
        _, cohort = split_cohort(cohort, task, config["train_fraction"], config["seed"])
        if cohort is None:
            raise ValidationError("recorded split leaves no held-out subjects; use --split all")
    result = evaluate_task(model, cohort, task, threads=_resolve_threads(args.threads))
    print(json.dumps({**result.metrics.as_dict(), "counts": result.counts.as_dict()}))
    return 0


def _cmd_analyze(args) -> int:
    model, config = load_checkpoint(args.ckpt)
    cohort = load_cohort(args.data)
    task = Task.from_string(config.get("task", Task.NC_EMCI.value))
    report, diffs = build_analysis(
        model,
        cohort,
        task,
        quantile=args.quantile,
        top_k=args.top_k,
        source=args.source,
        quantile_mode=args.quantile_mode,
        threads=_resolve_threads(args.threads),
    )
    out = Path(args.out)
    export_report(report, out)
    print(f"wrote {out}")
    stem = out.name[: -len(out.suffix)] if out.suffix else out.name
    csv_path = export_connections_csv(report, out.parent / f"{stem}.connections.csv")
    print(f"wrote {csv_path}")
    if not args.no_figures:
        from .figures import render_analysis_figures

        for path in render_analysis_figures(report, diffs, out.parent, stem):
            print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    result = run_full_check(
        n_rois=args.rois,
        seed=args.seed,
        step=args.step,
        tolerance=args.tolerance,
        separate_universal=args.separate_universal,
    )
    for check in result.checks:
        status = "ok" if check.passed else "FAIL"
        print(f"{check.name:<18} worst rel err {check.worst_rel_err:.3e}  {status}")
    print(
        f"checked {len(result.checks)} parameter groups in {result.seconds:.1f}s "
        f"(tolerance {result.tolerance:g})"
    )
    if not result.passed:
        names = ", ".join(c.name for c in result.failures)
        print(f"gradient check failed for: {names}", file=sys.stderr)
        return 3
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "analyze": _cmd_analyze,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as err:
        print(f"hscf {args.command}: {err}", file=sys.stderr)
        return 2
    except HscfError as err:
        print(f"hscf {args.command}: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"hscf {args.command}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
