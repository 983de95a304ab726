"""Command line interface.

Subcommands cover the full workflow: generate a dataset, train the
classifier, attack a single sample, sweep attack grids into CSV files,
and compare two tradeoff curves. Report-producing commands also render
a figure next to the delimited output unless --no-plot is given.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from .attacks import METHODS, AttackConfig, run_attack
from .classifier import TrainConfig, load_model, save_model, train
from .dataset import DatasetSpec, gen_dataset, load_dataset, save_dataset
from .harness import (
    PDR_METHODS,
    emit_csv,
    pareto_compare,
    read_curve_csv,
    sweep,
)
from .pdr import PdrConfig, pdr_attack


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _number(text: str) -> float:
    """Plain float or a fraction like 16/255."""
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a number or fraction, got {text!r}")


def _figure_path(out: str) -> str:
    stem, _ = os.path.splitext(out)
    return stem + ".png"


def _cmd_gen_data(args) -> int:
    spec = DatasetSpec(seed=args.seed, k=args.k, n_train=args.n_train,
                       n_test=args.n_test, size=args.size)
    dataset = gen_dataset(spec)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {spec.k} classes, "
          f"{spec.n_train} train / {spec.n_test} test, {spec.size}x{spec.size}")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, seed=args.seed)
    model = train(dataset, cfg)
    save_model(model, args.out)
    print(f"wrote {args.out}: train accuracy {model.meta['train_accuracy']:.4f}, "
          f"test accuracy {model.meta['test_accuracy']:.4f}")
    return 0


def _pdr_config(args, mis: str) -> PdrConfig:
    return PdrConfig(lambda0=args.lambda0, lr_lambda=args.lr_lambda, t=args.t,
                     max_iters=args.max_iters, eps=args.eps, mis=mis,
                     lambda_mode=args.lambda_mode, optimizer=args.optimizer,
                     seed=args.seed)


def _cmd_attack(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if not 0 <= args.index < len(dataset.x_test):
        raise UsageError(f"--index {args.index} outside test set "
                         f"of {len(dataset.x_test)} samples")
    x = dataset.x_test[args.index]
    y = int(dataset.y_test[args.index])

    if args.method in PDR_METHODS:
        result, _ = pdr_attack(model, x, y, _pdr_config(args, PDR_METHODS[args.method]))
    elif args.method in METHODS:
        cfg = AttackConfig(method=args.method, eps=args.eps, alpha=args.alpha,
                           iters=args.iters, seed=args.seed)
        result = run_attack(model, x, y, cfg)
    else:
        raise UsageError(f"unknown method {args.method!r}; known: "
                         f"{sorted(METHODS) + sorted(PDR_METHODS)}")

    np.savez(args.out, x=x, x_adv=result.x_adv, y=y,
             predicted=result.predicted, success=result.success,
             ssim=result.ssim_vs_original, linf=result.linf_vs_original,
             iterations_used=result.iterations_used)
    written = args.out if args.out.endswith(".npz") else args.out + ".npz"
    print(f"{args.method} on sample {args.index}: label {y} -> "
          f"predicted {result.predicted}, success={result.success}, "
          f"ssim={result.ssim_vs_original:.4f}, linf={result.linf_vs_original:.5f}, "
          f"iterations={result.iterations_used}")
    print(f"wrote {written}")
    if not args.no_plot:
        from .plotting import plot_attack_panel
        figure = plot_attack_panel(
            x, result.x_adv, _figure_path(written),
            title=f"{args.method}: {y} -> {result.predicted}")
        print(f"wrote {figure}")
    return 0


def _resolve_grid(args, methods: List[str]):
    """Pick the sweep axis from which grid flag was repeated."""
    any_pdr = any(m in PDR_METHODS for m in methods)
    any_baseline = any(m in METHODS for m in methods)
    lambda_grid = args.lambda0 if len(args.lambda0 or []) > 1 else []
    t_grid = args.t if len(args.t or []) > 1 else []
    eps_grid = args.eps if len(args.eps or []) > 1 else []
    chosen = [name for name, grid in
              (("lambda0", lambda_grid), ("t", t_grid), ("eps", eps_grid)) if grid]
    if len(chosen) > 1:
        raise UsageError(f"only one grid flag may be repeated, got {chosen}")

    if lambda_grid:
        axis, hypers = "lambda0", lambda_grid
    elif t_grid:
        axis, hypers = "t", t_grid
    elif eps_grid:
        axis, hypers = "eps", eps_grid
    elif args.t and any_pdr and not any_baseline:
        axis, hypers = "t", args.t
    elif args.eps:
        axis, hypers = "eps", args.eps
    elif args.t:
        axis, hypers = "t", args.t
    elif args.lambda0:
        axis, hypers = "lambda0", args.lambda0
    else:
        raise UsageError("no sweep grid given; repeat --eps, --T, or --lambda0")
    if axis != "eps" and any_baseline:
        raise UsageError(f"baseline methods sweep --eps, not --{axis}")
    return axis, hypers


def _cmd_sweep(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    methods = args.method
    axis, hypers = _resolve_grid(args, methods)

    eps_values = args.eps or []
    t_values = args.t or []
    lambda_values = args.lambda0 or []
    pdr_eps = eps_values[0] if axis != "eps" and len(eps_values) == 1 else 16 / 255
    pdr_t = t_values[0] if axis != "t" and len(t_values) == 1 else 0.92
    pdr_lambda0 = lambda_values[0] if axis != "lambda0" and len(lambda_values) == 1 \
        else 2.0

    attack_template = AttackConfig(method="ifgsm", alpha=args.alpha,
                                   iters=args.iters)
    pdr_template = PdrConfig(lambda0=pdr_lambda0, lr_lambda=args.lr_lambda,
                             t=pdr_t, max_iters=args.max_iters, eps=pdr_eps,
                             lambda_mode=args.lambda_mode,
                             optimizer=args.optimizer,
                             success_only=args.success_only)

    report = sweep(model, dataset, methods, hypers, seed=args.seed, n=args.n,
                   workers=args.workers, hyper_axis=axis,
                   attack_template=attack_template, pdr_template=pdr_template)
    emit_csv(report, args.out)
    print(f"wrote {args.out}: {len(report.points)} curve points over "
          f"{report.points[0].n} samples" if report.points else f"wrote {args.out}")
    if args.records_out:
        emit_csv(report.records, args.records_out)
        print(f"wrote {args.records_out}: {len(report.records)} sample records")
    if report.errors:
        print(f"{len(report.errors)} per-sample errors:", file=sys.stderr)
        for err in report.errors:
            print(f"  ({err.method}, {err.hyper:g}) sample {err.sample_id}: "
                  f"{err.message}", file=sys.stderr)
    if not args.no_plot:
        from .plotting import plot_tradeoff
        figure = plot_tradeoff(report, _figure_path(args.out),
                               title=f"{axis} sweep")
        print(f"wrote {figure}")
    return 0


def _cmd_compare(args) -> int:
    baseline = read_curve_csv(args.baseline)
    pdr = read_curve_csv(args.pdr)
    comparison = pareto_compare(baseline, pdr, asr_tolerance=args.tolerance)
    if comparison.incomparable:
        print("incomparable: the curves share no success-rate range")
        return 0
    print(f"{'asr':>8} {'ssim_base':>10} {'ssim_pdr':>10} {'delta':>10}")
    for row in comparison.rows:
        print(f"{row.asr:>8.4f} {row.ssim_baseline:>10.4f} "
              f"{row.ssim_pdr:>10.4f} {row.delta:>+10.4f}")
    verdict = "yes" if comparison.weakly_dominates else "no"
    print(f"weakly dominates: {verdict}")
    if args.out:
        import csv as csv_module
        with open(args.out, "w", newline="") as handle:
            writer = csv_module.writer(handle, lineterminator="\n")
            writer.writerow(["asr", "ssim_baseline", "ssim_pdr", "delta"])
            for row in comparison.rows:
                writer.writerow(["%.6g" % row.asr, "%.6g" % row.ssim_baseline,
                                 "%.6g" % row.ssim_pdr, "%.6g" % row.delta])
        print(f"wrote {args.out}")
        if not args.no_plot:
            from .plotting import plot_overlay
            figure = plot_overlay([("baseline", baseline), ("pdr", pdr)],
                                  _figure_path(args.out), title="tradeoff curves")
            print(f"wrote {figure}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdrkit",
                     description="adversarial attacks with a perceptual penalty")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="render a synthetic dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--k", type=int, default=4)
    gen.add_argument("--n-train", type=int, default=400)
    gen.add_argument("--n-test", type=int, default=200)
    gen.add_argument("--size", type=int, default=32)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train the classifier on a dataset file")
    tr.add_argument("--data", required=True)
    tr.add_argument("--epochs", type=int, default=20)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--lr", type=_number, default=0.05)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train)

    atk = sub.add_parser("attack", help="attack one test sample")
    atk.add_argument("--model", required=True)
    atk.add_argument("--data", required=True)
    atk.add_argument("--index", type=int, default=0)
    atk.add_argument("--method", required=True)
    atk.add_argument("--eps", type=_number, default=16 / 255)
    atk.add_argument("--alpha", type=_number, default=None)
    atk.add_argument("--iters", type=int, default=20)
    atk.add_argument("--T", dest="t", type=_number, default=0.92)
    atk.add_argument("--lambda0", type=_number, default=2.0)
    atk.add_argument("--lr-lambda", type=_number, default=50.0)
    atk.add_argument("--max-iters", type=int, default=150)
    atk.add_argument("--lambda-mode", default="adaptive",
                     choices=("adaptive", "constant", "off"))
    atk.add_argument("--optimizer", default="adam",
                     choices=("adam", "momentum-sgd"))
    atk.add_argument("--seed", type=int, default=0)
    atk.add_argument("--out", required=True)
    atk.add_argument("--no-plot", action="store_true")
    atk.set_defaults(func=_cmd_attack)

    sw = sub.add_parser("sweep", help="run a (method, hyperparameter) grid")
    sw.add_argument("--model", required=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--method", action="append", required=True)
    sw.add_argument("--eps", type=_number, action="append")
    sw.add_argument("--T", dest="t", type=_number, action="append")
    sw.add_argument("--lambda0", type=_number, action="append")
    sw.add_argument("--alpha", type=_number, default=None)
    sw.add_argument("--iters", type=int, default=20)
    sw.add_argument("--lr-lambda", type=_number, default=50.0)
    sw.add_argument("--max-iters", type=int, default=150)
    sw.add_argument("--lambda-mode", default="adaptive",
                    choices=("adaptive", "constant", "off"))
    sw.add_argument("--optimizer", default="adam",
                    choices=("adam", "momentum-sgd"))
    sw.add_argument("--success-only", action="store_true")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--n", type=int, default=None)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", required=True)
    sw.add_argument("--records-out", default=None)
    sw.add_argument("--no-plot", action="store_true")
    sw.set_defaults(func=_cmd_sweep)

    cmp_parser = sub.add_parser("compare", help="match two tradeoff curves")
    cmp_parser.add_argument("--baseline", required=True)
    cmp_parser.add_argument("--pdr", required=True)
    cmp_parser.add_argument("--tolerance", type=_number, default=0.05)
    cmp_parser.add_argument("--out", default=None)
    cmp_parser.add_argument("--no-plot", action="store_true")
    cmp_parser.set_defaults(func=_cmd_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        code = exc.code
        return 0 if code in (0, None) else int(code)
    try:
        return args.func(args) or 0
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary maps to exit code
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
