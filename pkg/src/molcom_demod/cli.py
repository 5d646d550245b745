#!/usr/bin/env python3
"""
molcom-demod CLI

Command-line interface for the simulate -> preprocess -> train -> evaluate
pipeline of a molecular communication CNN demodulator.

Usage:
    molcom-demod gen --n 100 --msg-len 40 --out runs/gen
    molcom-demod preprocess --in runs/gen/transmissions.jsonl --mode slope --out runs/data
    molcom-demod train --data runs/data --out runs/train
    molcom-demod eval --data runs/data --model runs/train/model --out runs/eval
    molcom-demod capacity --rg 6 --f 0.02 --pb 0.01

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from molcom_demod.logging_config import RUN_LOG, setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# Commands that only read their inputs
NO_RUN_LOG = ("validate",)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _resolve_config(args, overrides: dict | None = None):
    from molcom_demod.config import load_run_config

    overrides = dict(overrides or {})
    overrides.setdefault("seeds.master", getattr(args, "seed", None))
    config_path = Path(args.config) if getattr(args, "config", None) else None
    return load_run_config(config_path, overrides)


def _args_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_gen(args):
    """Generate a corpus of simulated transmissions."""
    from molcom_demod.config import write_run_record
    from molcom_demod.testbed_sim import NoiseConfig, generate_corpus, isi_ratio, write_transmissions

    error = _validate_options(args)
    if error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_USAGE

    config = _resolve_config(
        args,
        {"modulation.alphabet_size": args.alphabet, "modulation.symbol_rate": args.rate},
    )
    if args.noise_off:
        config = replace(config, noise=NoiseConfig.off())
    noise = config.noise
    out_dir = Path(args.out)

    parallel = not (args.sequential or args.deterministic)
    transmissions = generate_corpus(
        args.n,
        args.msg_len,
        config.modulation,
        config.channel,
        noise,
        config.seeds.master,
        max_workers=args.workers,
        parallel=parallel,
        verbose=args.verbose,
    )
    path = write_transmissions(transmissions, out_dir / "transmissions.jsonl")
    write_run_record(out_dir, "gen", config, _args_echo(args))

    mod = config.modulation
    print(f"Generated {len(transmissions)} transmissions x {args.msg_len} symbols")
    print(f"Alphabet: C={mod.alphabet_size}, {mod.symbol_rate} Hz, {mod.sample_rate} Hz sampling")
    print(f"ISI ratio: {isi_ratio(config.channel, mod.symbol_rate):.3f}")
    print(f"Output: {path}")
    return EXIT_OK


def cmd_preprocess(args):
    """Segment a corpus into a labeled dataset."""
    from molcom_demod.config import write_run_record
    from molcom_demod.plots import plot_trace
    from molcom_demod.preprocess import build_dataset, preprocess_transmission, save_dataset
    from molcom_demod.testbed_sim import read_transmissions

    in_path = Path(args.input)
    if not in_path.exists():
        print(f"Error: File not found: {in_path}", file=sys.stderr)
        return EXIT_DATA

    config = _resolve_config(args, {"seeds.split": args.split_seed})
    transmissions = read_transmissions(in_path)
    dataset = build_dataset(transmissions, args.mode, config.seeds.split, config.preprocess)
    out_dir = save_dataset(dataset, Path(args.out))
    write_run_record(out_dir, "preprocess", config, _args_echo(args))

    first = transmissions[0]
    _, _, result, series = preprocess_transmission(first, args.mode, config.preprocess)
    plot_trace(
        series.times,
        series.values,
        first.boundaries,
        first.symbols,
        out_dir / "trace.svg",
        detected_starts=[series.start_time + s / series.sample_rate for s in result.starts],
    )

    print(f"Segments: {len(dataset)} (C={dataset.alphabet_size}, mode={args.mode})")
    print(
        f"Split: train={len(dataset.split['train'])}, "
        f"val={len(dataset.split['val'])}, test={len(dataset.split['test'])}"
    )
    deltas = dataset.diagnostics.get("boundary_deltas")
    if deltas is not None and len(deltas):
        print(f"Boundary deltas vs truth: max |delta| = {int(abs(deltas).max())} samples")
    print(f"Output directory: {out_dir}")
    return EXIT_OK


def cmd_fit_channel(args):
    """Fit the arrival-law correction parameters to an observed series."""
    import json

    import numpy as np

    from molcom_demod.channel_models import (
        FitParams,
        ObservedSeries,
        fit_channel,
        log_times,
        residual_sum_of_squares,
        sample_observations,
    )
    from molcom_demod.config import write_run_record

    error = _validate_options(args)
    if error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_USAGE

    config = _resolve_config(args)
    ch = config.channel
    if args.input:
        obs = ObservedSeries.from_csv(Path(args.input))
        source = str(args.input)
    else:
        truth = FitParams(args.b1, args.b2, args.b3)
        rng = np.random.default_rng(config.seeds.master)
        times = log_times(args.t_min, args.t_max, args.points)
        obs = sample_observations(ch, truth, times, args.noise_sigma, rng)
        source = f"synthetic b=({truth.b1}, {truth.b2}, {truth.b3})"

    fit = fit_channel(ch, obs)
    rss = residual_sum_of_squares(ch, fit, obs)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "fit.json", "w", encoding="utf-8") as f:
        json.dump(
            {"b1": fit.b1, "b2": fit.b2, "b3": fit.b3, "rss": rss, "n": len(obs), "source": source},
            f,
            indent=2,
        )
    if not args.input:
        obs.to_csv(out_dir / "observations.csv")
    write_run_record(out_dir, "fit-channel", config, _args_echo(args))

    print(f"Observations: {len(obs)} ({source})")
    print(f"Fit: b1={fit.b1:.6f} b2={fit.b2:.6f} b3={fit.b3:.6f}")
    print(f"Residual sum of squares: {rss:.3e}")
    return EXIT_OK


def cmd_train(args):
    """Train the CNN demodulator on a segment dataset."""
    import numpy as np

    from molcom_demod.config import write_run_record
    from molcom_demod.demodulator import HISTORY_FILE, build_network, count_parameters, save_model, train
    from molcom_demod.plots import plot_history
    from molcom_demod.preprocess import load_dataset

    error = _validate_options(args)
    if error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_USAGE

    dataset = load_dataset(Path(args.data))
    config = _resolve_config(
        args,
        {
            "seeds.master": None,
            "training.seed": args.seed,
            "cnn.alphabet_size": dataset.alphabet_size,
            "cnn.fc_width": args.fc_width,
            "training.max_epochs": args.max_epochs,
            "training.batch_size": args.batch_size,
            "training.learning_rate": args.lr,
        },
    )
    rng = np.random.default_rng(config.training.seed)
    net = build_network(config.cnn, rng)
    print(f"Network: {count_parameters(net):,} parameters (fc_width={config.cnn.fc_width})")

    net, history = train(net, dataset, config.training, rng)

    out_dir = Path(args.out)
    save_model(net, config.cnn, out_dir / "model")
    history.to_csv(out_dir / HISTORY_FILE)
    plot_history(
        [e.epoch for e in history.epochs],
        [e.train_loss for e in history.epochs],
        [e.val_loss for e in history.epochs],
        out_dir / "history.svg",
    )
    write_run_record(out_dir, "train", config, _args_echo(args), seed=config.training.seed)

    print(history.summary())
    print(f"Model directory: {out_dir / 'model'}")
    return EXIT_OK


def cmd_eval(args):
    """Evaluate a trained model on one split of a dataset."""
    import json

    from molcom_demod.config import write_run_record
    from molcom_demod.demodulator import (
        load_model,
        predict_batch,
        threshold_baseline_fit,
        threshold_baseline_predict_batch,
    )
    from molcom_demod.eval_metrics import (
        CONFUSION_FILE,
        OFFSETS_FILE,
        SUMMARY_FILE,
        accuracy,
        bit_error_rate_from_confusion,
        confusion,
        report,
        row_normalize,
        write_confusion_csv,
        write_offsets_csv,
        write_summary_csv,
    )
    from molcom_demod.errors import DataError
    from molcom_demod.plots import plot_confusion
    from molcom_demod.preprocess import load_dataset

    error = _validate_options(args)
    if error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_USAGE

    config = _resolve_config(args)
    dataset = load_dataset(Path(args.data))
    net, cnn = load_model(Path(args.model))
    if cnn.alphabet_size != dataset.alphabet_size:
        raise DataError(f"model has C={cnn.alphabet_size}, dataset has C={dataset.alphabet_size}")

    X, y = dataset.subset(args.split)
    if len(y) == 0:
        raise DataError(f"split {args.split!r} is empty")
    labels, _ = predict_batch(net, X)
    cm = confusion(y, labels, dataset.alphabet_size)

    baseline_means = threshold_baseline_fit(dataset)
    baseline_cm = confusion(y, threshold_baseline_predict_batch(baseline_means, X), dataset.alphabet_size)

    symbol_rate = float(dataset.provenance.get("modulation", {}).get("symbol_rate", config.modulation.symbol_rate))
    scenario = args.scenario or f"C{dataset.alphabet_size}_{symbol_rate:g}Hz"
    bundle = report(
        cm,
        symbol_rate,
        measured_f=bit_error_rate_from_confusion(cm, args.mapping),
        pb=args.pb,
        scenario=scenario,
        baseline_accuracy=accuracy(baseline_cm),
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_confusion_csv(cm, out_dir / CONFUSION_FILE)
    write_offsets_csv([bundle], out_dir / OFFSETS_FILE)
    write_summary_csv([bundle], out_dir / SUMMARY_FILE)
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(bundle.to_dict(), f, indent=2)
    probs, _ = row_normalize(cm)
    plot_confusion(probs, out_dir / "confusion.svg", title=f"{scenario}: accuracy {bundle.accuracy:.2f}")
    write_run_record(out_dir, "eval", config, _args_echo(args))

    print(bundle.summary())
    print(f"Output directory: {out_dir}")
    return EXIT_OK


def cmd_capacity(args):
    """Net data rate bound for a gross rate and channel bit error rate."""
    from molcom_demod.config import write_run_record
    from molcom_demod.eval_metrics import CapacityQuery, binary_entropy, net_data_rate, rate_boundary

    error = _validate_options(args)
    if error:
        print(f"Error: {error}", file=sys.stderr)
        return EXIT_USAGE

    config = _resolve_config(args)
    rate = net_data_rate(CapacityQuery(args.rg, args.f, args.pb))
    print(f"H2(f)  = {binary_entropy(args.f):.6f}")
    print(f"H2(pb) = {binary_entropy(args.pb):.6f}")
    print(f"R = {rate:.3f} bit/s")
    if args.target is not None:
        boundary = rate_boundary(args.rg, args.target, args.pb)
        print(f"R >= {args.target} bit/s requires f <= {boundary:.4f}")

    if args.out:
        write_run_record(Path(args.out), "capacity", config, _args_echo(args))
    return EXIT_OK


def cmd_report(args):
    """Aggregate several eval directories into Table-style CSVs and plots."""
    import json

    from molcom_demod.config import write_run_record
    from molcom_demod.eval_metrics import (
        OFFSETS_FILE,
        SUMMARY_FILE,
        ConfusionMatrix,
        ScenarioReport,
        row_normalize,
        write_offsets_csv,
        write_summary_csv,
    )
    from molcom_demod.errors import DataError
    from molcom_demod.plots import plot_confusion, plot_offsets

    reports = []
    for eval_dir in args.eval_dirs:
        path = Path(eval_dir) / "report.json"
        try:
            with open(path, encoding="utf-8") as f:
                reports.append(ScenarioReport.from_dict(json.load(f)))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read {path}: {e}") from e

    config = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_offsets_csv(reports, out_dir / OFFSETS_FILE)
    write_summary_csv(reports, out_dir / SUMMARY_FILE)
    plot_offsets([r.scenario for r in reports], [r.offsets for r in reports], out_dir / "offsets.svg")
    for r in reports:
        probs, _ = row_normalize(ConfusionMatrix(r.confusion))
        plot_confusion(probs, out_dir / f"confusion_{r.scenario}.svg", title=r.scenario)
    write_run_record(out_dir, "report", config, _args_echo(args))

    print(f"{'Scenario':<16} {'Accuracy':>9} {'f_nat':>8} {'f_gray':>8} {'R [bit/s]':>10}")
    print(f"{'-' * 16} {'-' * 9} {'-' * 8} {'-' * 8} {'-' * 10}")
    for r in reports:
        print(f"{r.scenario:<16} {r.accuracy:>9.4f} {r.f_natural:>8.4f} {r.f_gray:>8.4f} {r.net_rate:>10.3f}")
    print(f"\nOutput directory: {out_dir}")
    return EXIT_OK


def cmd_validate(args):
    """Validate a corpus file or a dataset directory against its schema."""
    from molcom_demod.validation import run_validation

    path = Path(args.path)
    if not path.exists():
        print(f"Error: Path not found: {path}", file=sys.stderr)
        return EXIT_DATA

    success, stats = run_validation(path)

    if args.verbose:
        print(f"{'=' * 70}")
        print(f"VALIDATION RESULTS ({stats['kind']})")
        print(f"{'=' * 70}")
        for v in stats["validations"]:
            status = "OK" if v["valid"] else "FAIL"
            where = f"line {v['line']}" if "line" in v else v.get("dataset", "")
            print(f"[{status:4}] {where}")
            for issue in v.get("issues", []):
                print(f"       - {issue}")
        for issue in stats["global_issues"]:
            print(f"- {issue}")
        print(f"{'-' * 70}")

    print(f"Items: {stats['valid_items']}/{stats['total_items']} valid")
    if success:
        print("PASSED")
        return EXIT_OK
    print("FAILED")
    return EXIT_DATA


def _add_common_options(parser, out_default: str | None = "out"):
    """Add options shared by every subcommand."""
    parser.add_argument("--seed", type=int, default=None, help="Master seed (default: from config, 0)")
    parser.add_argument(
        "--out", default=out_default, help=f"Output directory (default: {out_default})"
    )
    parser.add_argument("--config", default=None, help="JSON config or a previous run.json")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="Single-threaded BLAS and sequential generation",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Enable INFO level logging (default: WARNING)"
    )


def _validate_options(args):
    """Validate numeric options, returns error message or None."""
    checks = [
        ("n", 1, "--n"),
        ("msg_len", 1, "--msg-len"),
        ("points", 3, "--points"),
        ("max_epochs", 1, "--max-epochs"),
        ("batch_size", 1, "--batch-size"),
        ("fc_width", 2, "--fc-width"),
        ("workers", 1, "--workers"),
    ]
    for attr, minimum, flag in checks:
        value = getattr(args, attr, None)
        if value is not None and value < minimum:
            return f"{flag} must be >= {minimum}, got {value}"
    pb = getattr(args, "pb", None)
    if pb is not None and not 0 < pb < 0.5:
        return f"--pb must be in (0, 0.5), got {pb}"
    f = getattr(args, "f", None)
    if f is not None and not 0 <= f <= 0.5:
        return f"--f must be in [0, 0.5], got {f}"
    rg = getattr(args, "rg", None)
    if rg is not None and not rg > 0:
        return f"--rg must be > 0, got {rg}"
    lr = getattr(args, "lr", None)
    if lr is not None and not lr > 0:
        return f"--lr must be > 0, got {lr}"
    return None


def _pin_threads():
    for name in THREAD_ENV_VARS:
        os.environ[name] = "1"


def _run(args) -> int:
    from molcom_demod.errors import DataError, DomainError, NumericError

    try:
        return args.func(args)
    except DomainError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    parser = _Parser(
        description="molcom-demod - CNN demodulation for molecular communication",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  Simulate a corpus (parallel by default):
    molcom-demod gen --n 100 --msg-len 40 --alphabet 8 --rate 2 --out runs/c8_2hz
    molcom-demod gen --n 2 --seed 7 --deterministic --out runs/tiny

  Preprocess into a segment dataset:
    molcom-demod preprocess --in runs/c8_2hz/transmissions.jsonl --mode slope --out runs/c8_2hz/data

  Train and evaluate:
    molcom-demod train --data runs/c8_2hz/data --fc-width 256 --out runs/c8_2hz/train
    molcom-demod eval --data runs/c8_2hz/data --model runs/c8_2hz/train/model --out runs/c8_2hz/eval

  Aggregate scenarios:
    molcom-demod report runs/c8_2hz/eval runs/c8_4hz/eval --out runs/report

  Channel fit and rate bound:
    molcom-demod fit-channel --b1 1.2 --b2 0.9 --b3 1.1 --out runs/fit
    molcom-demod capacity --rg 6 --f 0.02 --pb 0.01 --target 5.5

  Validate artifacts:
    molcom-demod validate runs/c8_2hz/transmissions.jsonl
""",
    )

    from . import __version__

    parser.add_argument("-V", "--version", action="version", version=f"molcom-demod {__version__}")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    # gen command
    p_gen = subparsers.add_parser("gen", help="Simulate a corpus of transmissions")
    p_gen.add_argument("--n", type=int, default=100, help="Number of transmissions (default: 100)")
    p_gen.add_argument("--msg-len", type=int, default=40, help="Symbols per transmission (default: 40)")
    p_gen.add_argument("--alphabet", type=int, default=None, help="Alphabet size C")
    p_gen.add_argument("--rate", type=float, default=None, help="Symbol rate in Hz")
    p_gen.add_argument("--noise-off", action="store_true", help="Disable all disturbances")
    p_gen.add_argument(
        "-w", "--workers", type=int, default=None, help="Parallel workers (default: 80%% of CPUs)"
    )
    p_gen.add_argument("--sequential", action="store_true", help="Disable parallel generation")
    _add_common_options(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    # preprocess command
    p_pre = subparsers.add_parser("preprocess", help="Segment a corpus into a dataset")
    p_pre.add_argument("--in", dest="input", required=True, help="transmissions.jsonl")
    p_pre.add_argument("--mode", choices=["slope", "oracle"], default="slope", help="Segmentation mode")
    p_pre.add_argument("--split-seed", type=int, default=None, help="Seed of the stratified split")
    _add_common_options(p_pre)
    p_pre.set_defaults(func=cmd_preprocess)

    # fit-channel command
    p_fit = subparsers.add_parser("fit-channel", help="Fit arrival-law correction parameters")
    p_fit.add_argument("--in", dest="input", default=None, help="CSV with header t_s,value")
    p_fit.add_argument("--b1", type=float, default=1.2, help="Synthetic b1 (default: 1.2)")
    p_fit.add_argument("--b2", type=float, default=0.9, help="Synthetic b2 (default: 0.9)")
    p_fit.add_argument("--b3", type=float, default=1.1, help="Synthetic b3 (default: 1.1)")
    p_fit.add_argument("--points", type=int, default=50, help="Synthetic observations (default: 50)")
    p_fit.add_argument("--t-min", type=float, default=0.01, help="First observation time (default: 0.01)")
    p_fit.add_argument("--t-max", type=float, default=10.0, help="Last observation time (default: 10)")
    p_fit.add_argument("--noise-sigma", type=float, default=0.0, help="Observation noise (default: 0)")
    _add_common_options(p_fit)
    p_fit.set_defaults(func=cmd_fit_channel)

    # train command
    p_train = subparsers.add_parser("train", help="Train the CNN demodulator")
    p_train.add_argument("--data", required=True, help="Segment dataset directory")
    p_train.add_argument("--fc-width", type=int, default=None, help="Fully-connected width (default: 4096)")
    p_train.add_argument("--max-epochs", type=int, default=None, help="Epoch cap (default: 200)")
    p_train.add_argument("--batch-size", type=int, default=None, help="Batch size (default: 64)")
    p_train.add_argument("--lr", type=float, default=None, help="Initial learning rate (default: 1e-3)")
    _add_common_options(p_train)
    p_train.set_defaults(func=cmd_train)

    # eval command
    p_eval = subparsers.add_parser("eval", help="Evaluate a trained model")
    p_eval.add_argument("--data", required=True, help="Segment dataset directory")
    p_eval.add_argument("--model", required=True, help="Model directory written by train")
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test", help="Split to evaluate")
    p_eval.add_argument("--pb", type=float, default=0.01, help="Tolerated residual bit error rate (default: 0.01)")
    p_eval.add_argument(
        "--mapping", choices=["natural", "gray"], default="natural", help="Bit mapping of the reported f"
    )
    p_eval.add_argument("--scenario", default=None, help="Scenario name (default: C<C>_<rate>Hz)")
    _add_common_options(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    # capacity command
    p_cap = subparsers.add_parser("capacity", help="Net data rate bound")
    p_cap.add_argument("--rg", type=float, required=True, help="Gross data rate in bit/s")
    p_cap.add_argument("--f", type=float, required=True, help="Channel bit error rate")
    p_cap.add_argument("--pb", type=float, default=0.01, help="Tolerated residual bit error rate (default: 0.01)")
    p_cap.add_argument("--target", type=float, default=None, help="Also print the largest f reaching this rate")
    _add_common_options(p_cap, out_default=None)
    p_cap.set_defaults(func=cmd_capacity)

    # report command
    p_report = subparsers.add_parser("report", help="Aggregate eval directories")
    p_report.add_argument("eval_dirs", nargs="+", help="Directories written by eval")
    _add_common_options(p_report)
    p_report.set_defaults(func=cmd_report)

    # validate command
    p_validate = subparsers.add_parser("validate", help="Validate a corpus file or dataset directory")
    p_validate.add_argument("path", help="transmissions.jsonl or dataset directory")
    _add_common_options(p_validate)
    p_validate.set_defaults(func=cmd_validate)

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    if args.deterministic:
        _pin_threads()

    # Commands with an output directory also keep a run.log there
    log_file = None
    if args.out and args.command not in NO_RUN_LOG:
        log_file = Path(args.out) / RUN_LOG
    try:
        setup_logging(verbose=args.verbose, log_file=log_file)
    except OSError as e:
        setup_logging(verbose=args.verbose)
        print(f"Error: cannot write run log {log_file}: {e}", file=sys.stderr)
        return EXIT_DATA

    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
