"""Command-line front end: train, compare, gradcheck, report.

Exit codes: 0 success, 1 runtime failure (for gradcheck: tolerance failure),
2 usage or config failure. Every run is reproducible from its config plus
master_seed; no wall-clock seeding anywhere.
"""

import argparse
import json
import os
import sys

from .config import ConfigError, RunConfig
from .data import FormatError, one_hot
from .network import (GRADIENT_CHECK_GUARD, SpecError, build_network, gradient_check,
                      preset)
from .report import (ReportDataError, render_figures, render_table, validate_report,
                     write_curve_csv, write_histogram_csv, write_seed_csv)
from .stats import run_comparison
from .tensor import GENERATOR_ALGORITHM, Rng, derive_seed
from .training import TrainingDiverged, evaluate_accuracy, save_checkpoint, train

GRADCHECK_TOLERANCE = 1e-4


def _dump_json(payload, path):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=False)
        f.write("\n")


def _require_config(args):
    if not args.config:
        raise ConfigError("config: --config is required for this command")
    return RunConfig.from_file(args.config)


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    if args.config:
        cfg = _require_config(args)
    else:
        if not args.preset:
            raise ConfigError("config: provide --config or --preset")
        dataset = {"kind": "mnist"} if args.preset.startswith("mnist") else {
            "kind": "cifar10",
            "train_batches": [f"data_batch_{i}.bin" for i in range(1, 6)],
            "test_batch": "test_batch.bin"}
        cfg = RunConfig.from_dict({
            "version": 1,
            "dataset": dataset,
            "network": {"preset": args.preset},
            "experiment": {},
            "output_dir": args.out or "out",
        })
    double_weight = True if args.double_weight else None
    spec = cfg.network_spec(double_weight=double_weight)
    if args.iterations is not None:
        spec.iterations = args.iterations
        spec.validate()
    exp = cfg.experiment_params()

    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    train_set, test_set = cfg.load_datasets()
    eval_n = min(exp["test_subset_size"], len(test_set))

    model = build_network(spec)
    log = train(model, train_set, spec,
                eval_images=test_set.images[:eval_n],
                eval_labels=test_set.labels[:eval_n],
                eval_cadence=exp["eval_cadence"],
                log_path=os.path.join(out_dir, "curve.csv"))
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.dwck"))

    final_acc = evaluate_accuracy(model, test_set.images[:eval_n],
                                  test_set.labels[:eval_n])
    summary = {
        "spec": spec.to_dict(),
        "iterations_run": model.iteration,
        "final_train_loss": log.losses[-1] if log.losses else None,
        "final_test_accuracy": final_acc,
        "eval": {"test_subset_size": eval_n, "eval_cadence": exp["eval_cadence"]},
        "prng": {"algorithm": GENERATOR_ALGORITHM, "master_seed": exp["master_seed"]},
        "pixel_normalization": "x/255, no mean centering",
    }
    _dump_json(summary, os.path.join(out_dir, "run_summary.json"))
    print(f"trained {model.iteration} iterations; "
          f"test accuracy {final_acc:.4f}; outputs in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args):
    cfg = _require_config(args)
    exp = cfg.experiment_params()
    if args.seeds is not None:
        if args.seeds < 2:
            raise ConfigError(f"experiment.n_seeds: must be >= 2, got {args.seeds}")
        exp["n_seeds"] = args.seeds
    if args.jobs is not None:
        exp["jobs"] = args.jobs

    spec_a = cfg.network_spec(double_weight=False)
    spec_b = cfg.network_spec(double_weight=True)
    train_set, test_set = cfg.load_datasets()

    report = run_comparison(
        spec_a, spec_b, train_set, test_set,
        n_seeds=exp["n_seeds"], burn_in=exp["burn_in"],
        master_seed=exp["master_seed"],
        test_subset_size=exp["test_subset_size"],
        eval_cadence=exp["eval_cadence"], jobs=exp["jobs"], paired=exp["paired"])

    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    payload = report.to_json_dict()
    _dump_json(payload, os.path.join(out_dir, "report.json"))
    _dump_json(report.timing_json_dict(), os.path.join(out_dir, "timing.json"))
    write_seed_csv(payload, os.path.join(out_dir, "seeds.csv"))
    curves_dir = os.path.join(out_dir, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    for label in report.labels:
        for summary, curve in zip(report.summaries[label], report.curves[label]):
            path = os.path.join(curves_dir, f"{label}_seed{summary.seed}.csv")
            with open(path, "w") as f:
                f.write("iteration,accuracy\n")
                for it, acc in zip(curve.iterations, curve.accuracies):
                    f.write(f"{it},{acc!r}\n")
    print(render_table(payload, report.timing_json_dict()))
    print(f"report written to {os.path.join(out_dir, 'report.json')}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _scaled_spec(name, scale, double_weight):
    """Shrink a preset (input extents, widths, depths) for exhaustive checking."""
    spec = preset(name, double_weight=double_weight)
    if len(spec.input_shape) == 1:
        spec.input_shape = (max(4, int(spec.input_shape[0] * scale)),)
    else:
        h, w, c = spec.input_shape
        spec.input_shape = (max(4, int(h * scale * 2)), max(4, int(w * scale * 2)), c)
    for layer in spec.layers[:-1]:
        if hasattr(layer, "units"):
            layer.units = max(2, int(layer.units * scale))
        else:
            layer.depth = max(1, int(layer.depth * scale))
            layer.window = min(layer.window, spec.input_shape[0])
    return spec.validate()


def _kink_margin(model, images):
    """Smallest |pre-activation| across relu layers; inf when there are none."""
    _, caches = model.forward(images, want_caches=True)
    margins = [float(abs(c.z).min()) for c in caches if c.activation == "relu"]
    return min(margins) if margins else float("inf")


def cmd_gradcheck(args):
    spec = _scaled_spec(args.preset, args.scale, args.double_weight)
    spec.seed = args.seed
    # Healthy operating point for the finite-difference instrument: moderate
    # weights and unit second weights keep every gradient well off the float
    # noise floor; the double-weight backward algebra is exercised either way.
    spec.init = {"weight_sigma": 0.5, "gamma_init": "ones"}
    model = build_network(spec)
    count = model.parameter_count()
    if count > GRADIENT_CHECK_GUARD:
        print(f"refusing: {count} parameters exceeds the {GRADIENT_CHECK_GUARD} "
              f"guard; lower --scale", file=sys.stderr)
        return 2

    classes = spec.layers[-1].units
    batch = 2
    best_images, best_targets, best_margin = None, None, -1.0
    for attempt in range(20):  # relu kinks invalidate finite differences
        rng = Rng(derive_seed(args.seed, "gradcheck", attempt))
        images = rng.uniform(0.0, 1.0, size=(batch,) + tuple(spec.input_shape))
        targets = one_hot(rng.integers(0, classes, size=batch), classes)
        margin = _kink_margin(model, images)
        if margin > best_margin:
            best_images, best_targets, best_margin = images, targets, margin
        if margin > 1e-2:
            break

    override = None
    if args.corrupt:
        def override(grads):  # negative control: poison one tensor's gradient
            grads[0]["w" if hasattr(model.layers[0].params, "w") else "kernels"] += 0.5
            return grads

    report = gradient_check(model, best_images, best_targets,
                            epsilon=(1e-5, 1e-4, 1e-3), grads_override=override)
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name:<20} max rel err {err:.3e}")
    print(f"worst {worst:.3e} ({'OK' if worst < GRADCHECK_TOLERANCE else 'FAIL'} "
          f"at {GRADCHECK_TOLERANCE:.0e}, {count} parameters, "
          f"kink margin {best_margin:.1e})")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------------------
# report


def cmd_report(args):
    try:
        with open(args.report_path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"report: file not found: {args.report_path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report: invalid JSON: {exc}")
    validate_report(payload)

    out_dir = args.out or os.path.dirname(os.path.abspath(args.report_path))
    os.makedirs(out_dir, exist_ok=True)
    timing = None
    timing_path = os.path.join(os.path.dirname(os.path.abspath(args.report_path)),
                               "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path) as f:
            timing = json.load(f)

    print(render_table(payload, timing))
    written = [
        write_curve_csv(payload, os.path.join(out_dir, "fig_accuracy_curves.csv")),
        write_histogram_csv(payload, os.path.join(out_dir, "fig_accuracy_histogram.csv")),
        write_seed_csv(payload, os.path.join(out_dir, "seeds.csv")),
    ]
    written += render_figures(payload, out_dir)
    print("wrote: " + ", ".join(os.path.basename(p) for p in written))
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dwnet",
        description="Train and compare standard vs double-weight networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model from a config or preset")
    p_train.add_argument("--config", help="run config JSON")
    p_train.add_argument("--preset", help="mnist-fnn | mnist-cnn | cifar10-cnn")
    p_train.add_argument("--double-weight", action="store_true",
                         help="use double weights on all dense layers")
    p_train.add_argument("--iterations", type=int, help="override training iterations")
    p_train.add_argument("--out", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare", help="multi-seed standard vs double-weight run")
    p_cmp.add_argument("--config", required=False, help="run config JSON")
    p_cmp.add_argument("--seeds", type=int, help="override experiment.n_seeds")
    p_cmp.add_argument("--jobs", type=int, help="parallel training processes")
    p_cmp.add_argument("--out", help="output directory")
    p_cmp.set_defaults(func=cmd_compare)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check a scaled preset")
    p_gc.add_argument("--preset", default="mnist-fnn")
    p_gc.add_argument("--scale", type=float, default=0.05,
                      help="shrink factor applied to widths and input extents")
    p_gc.add_argument("--double-weight", action="store_true")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_rep = sub.add_parser("report", help="render tables, CSVs and figures")
    p_rep.add_argument("report_path", help="path to a compare report.json")
    p_rep.add_argument("--out", help="output directory (default: beside the report)")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, SpecError, FormatError, ReportDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
