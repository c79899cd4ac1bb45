"""Multi-seed comparison protocol and its statistics.

Two architecture variants (standard vs double-weight, everything else
identical) are trained across n seeds; each run is summarized by the mean
test accuracy past a burn-in iteration, and the two accuracy distributions
are compared with Welch's t-test. Seeds are paired by default: run i of
both variants starts from the same derived seed, so the shared parameter
draws are bit-identical and the gap isolates the mechanism. Pass
paired=False for independently drawn configurations per variant.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .network import NetworkSpec, build_network
from .tensor import GENERATOR_ALGORITHM, derive_seed
from .training import TrainingDiverged, evaluate_accuracy, train

P_VALUE_FLOOR = 1e-300  # reported instead of 0 when the survival underflows


class DegenerateInputError(ValueError):
    """Both samples are constant and equal; the t statistic is undefined."""


# ---------------------------------------------------------------------------
# per-run summaries


@dataclass
class AccuracyCurve:
    """(iteration, test accuracy) points for one run, iterations increasing."""

    iterations: list
    accuracies: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValueError("AccuracyCurve: iterations must be strictly increasing")


@dataclass
class SeedSummary:
    seed: int
    mean_accuracy: float
    final_accuracy: float
    wall_time: float


def summarize_run(curve, burn_in):
    """Mean accuracy over points with iteration strictly past burn_in."""
    kept = [acc for it, acc in zip(curve.iterations, curve.accuracies) if it > burn_in]
    if not kept:
        raise ValueError(f"summarize_run: no accuracy points past burn_in={burn_in}")
    return float(np.mean(kept))


# ---------------------------------------------------------------------------
# Welch's t-test


def welch_t_test(a, b):
    """Two-sample Welch test: returns (t, df, two-sided p).

    Unbiased sample variances, Welch-Satterthwaite degrees of freedom, and
    the two-sided p from the Student-t survival function via the regularized
    incomplete beta, clamped below at P_VALUE_FLOOR instead of reporting 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError(f"welch_t_test: need >= 2 samples per side, got {na} and {nb}")
    ma, mb = float(np.mean(a)), float(np.mean(b))
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if ma == mb:
            raise DegenerateInputError("welch_t_test: zero variance in both samples "
                                       "and equal means")
        return math.copysign(math.inf, ma - mb), float(min(na, nb) - 1), P_VALUE_FLOOR
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, df, max(p, P_VALUE_FLOOR)


# ---------------------------------------------------------------------------
# the comparison harness


@dataclass
class ComparisonReport:
    labels: tuple
    summaries: dict               # label -> [SeedSummary], sorted by seed index
    curves: dict                  # label -> [AccuracyCurve]
    means: dict
    variances: dict
    welch_t: float
    welch_df: float
    p_value: float
    time_ratio: float             # mean wall time of variant B over variant A
    failures: dict                # label -> [{"index", "seed", "error"}]
    config: dict = field(default_factory=dict)

    def to_json_dict(self):
        """Deterministic report payload: everything except wall-clock timing."""
        out = {
            "report_version": 1,
            "labels": list(self.labels),
            "config": self.config,
            "statistics": {
                "means": {k: self.means[k] for k in self.labels},
                "variances": {k: self.variances[k] for k in self.labels},
                "welch_t": self.welch_t,
                "welch_df": self.welch_df,
                "p_value": self.p_value,
                "p_value_floor": P_VALUE_FLOOR,
                "sidedness": "two-sided",
                "accuracy_gap": self.means[self.labels[1]] - self.means[self.labels[0]],
            },
            "summaries": {
                label: [{"seed": s.seed, "mean_accuracy": s.mean_accuracy,
                         "final_accuracy": s.final_accuracy}
                        for s in self.summaries[label]]
                for label in self.labels
            },
            "curves": {
                label: [{"seed": s.seed, "iterations": c.iterations,
                         "accuracies": c.accuracies}
                        for s, c in zip(self.summaries[label], self.curves[label])]
                for label in self.labels
            },
            "failures": self.failures,
        }
        return out

    def timing_json_dict(self):
        """Volatile wall-clock sidecar, split out so the report stays bit-stable."""
        return {
            "wall_times": {label: [s.wall_time for s in self.summaries[label]]
                           for label in self.labels},
            "mean_wall_times": {label: float(np.mean([s.wall_time for s in
                                                      self.summaries[label]]))
                                for label in self.labels},
            "time_ratio": self.time_ratio,
        }


def _strip_variant_fields(spec_dict):
    out = dict(spec_dict)
    out["seed"] = 0
    out["layers"] = [{k: v for k, v in layer.items() if k != "double_weight"}
                     for layer in out["layers"]]
    return out


# Worker context is installed module-wide before the pool forks, so the
# dataset arrays are inherited instead of pickled per task.
_WORKER_CTX = {}


def _install_worker_ctx(train_set, eval_images, eval_labels, eval_cadence):
    _WORKER_CTX["train_set"] = train_set
    _WORKER_CTX["eval_images"] = eval_images
    _WORKER_CTX["eval_labels"] = eval_labels
    _WORKER_CTX["eval_cadence"] = eval_cadence


def _run_single(task):
    label, index, seed, spec_dict = task
    spec = NetworkSpec.from_dict(spec_dict).with_seed(seed)
    model = build_network(spec)
    points_it, points_acc = [], []

    def observer(iteration, loss, accuracy):
        if accuracy is not None:
            points_it.append(iteration)
            points_acc.append(accuracy)

    start = time.perf_counter()
    try:
        train(model, _WORKER_CTX["train_set"], spec, observer=observer,
              eval_images=_WORKER_CTX["eval_images"],
              eval_labels=_WORKER_CTX["eval_labels"],
              eval_cadence=_WORKER_CTX["eval_cadence"])
    except TrainingDiverged as exc:
        return label, index, seed, None, None, None, str(exc)
    wall = time.perf_counter() - start
    final = points_acc[-1] if points_acc else evaluate_accuracy(
        model, _WORKER_CTX["eval_images"], _WORKER_CTX["eval_labels"])
    return label, index, seed, (points_it, points_acc), final, wall, None


def run_comparison(spec_a, spec_b, train_set, test_set, n_seeds, burn_in,
                   master_seed, labels=("standard", "double_weight"),
                   test_subset_size=1000, eval_cadence=1, jobs=1, paired=True,
                   allow_spec_mismatch=False):
    """Train n_seeds runs of each variant and compare their accuracy means.

    The variants must differ only in double_weight flags; anything else is an
    error unless allow_spec_mismatch, which downgrades it to a warning. Runs
    that diverge are excluded from the statistics and surfaced in
    report.failures. Execution order never affects the report: results are
    keyed by (variant, seed index).
    """
    if n_seeds < 2:
        raise ValueError(f"run_comparison: n_seeds must be >= 2, got {n_seeds}")
    spec_a.validate()
    spec_b.validate()
    if _strip_variant_fields(spec_a.to_dict()) != _strip_variant_fields(spec_b.to_dict()):
        msg = "variants differ beyond double_weight flags"
        if not allow_spec_mismatch:
            raise ValueError(f"run_comparison: {msg} (pass allow_spec_mismatch to override)")
        warnings.warn(f"run_comparison: {msg}; continuing as requested")

    eval_n = min(test_subset_size, len(test_set))
    eval_images = test_set.images[:eval_n]
    eval_labels = test_set.labels[:eval_n]
    _install_worker_ctx(train_set, eval_images, eval_labels, eval_cadence)

    tasks = []
    for index in range(1, n_seeds + 1):
        for label, spec in zip(labels, (spec_a, spec_b)):
            seed = (derive_seed(master_seed, "pair", index) if paired
                    else derive_seed(master_seed, label, index))
            tasks.append((label, index, seed, spec.to_dict()))

    if jobs > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=jobs) as pool:
            results = pool.map(_run_single, tasks)
    else:
        results = [_run_single(task) for task in tasks]

    summaries = {label: [] for label in labels}
    curves = {label: [] for label in labels}
    failures = {label: [] for label in labels}
    for label, index, seed, points, final, wall, error in sorted(
            results, key=lambda r: (labels.index(r[0]), r[1])):
        if error is not None:
            failures[label].append({"index": index, "seed": seed, "error": error})
            continue
        curve = AccuracyCurve(iterations=points[0], accuracies=points[1])
        summaries[label].append(SeedSummary(
            seed=seed, mean_accuracy=summarize_run(curve, burn_in),
            final_accuracy=final, wall_time=wall))
        curves[label].append(curve)

    for label in labels:
        if len(summaries[label]) < 2:
            raise RuntimeError(f"run_comparison: variant {label!r} has "
                               f"{len(summaries[label])} surviving runs; need >= 2")

    acc_a = [s.mean_accuracy for s in summaries[labels[0]]]
    acc_b = [s.mean_accuracy for s in summaries[labels[1]]]
    try:
        t, df, p = welch_t_test(acc_a, acc_b)
        degenerate = False
    except DegenerateInputError:
        # all runs of both variants landed on the same accuracy: report the
        # observed no-difference outcome instead of refusing the report
        t, df, p = 0.0, float(min(len(acc_a), len(acc_b)) - 1), 1.0
        degenerate = True
    wall_a = float(np.mean([s.wall_time for s in summaries[labels[0]]]))
    wall_b = float(np.mean([s.wall_time for s in summaries[labels[1]]]))

    config = {
        "variants": {labels[0]: spec_a.to_dict(), labels[1]: spec_b.to_dict()},
        "n_seeds": n_seeds,
        "burn_in": burn_in,
        "master_seed": master_seed,
        "paired_seeds": paired,
        "test_subset_size": eval_n,
        "eval_cadence": eval_cadence,
        "prng": {"algorithm": GENERATOR_ALGORITHM, "master_seed": master_seed},
        "pixel_normalization": "x/255, no mean centering",
        "failure_counts": {label: len(failures[label]) for label in labels},
        "degenerate_statistics": degenerate,
    }
    return ComparisonReport(
        labels=tuple(labels), summaries=summaries, curves=curves,
        means={labels[0]: float(np.mean(acc_a)), labels[1]: float(np.mean(acc_b))},
        variances={labels[0]: float(np.var(acc_a, ddof=1)),
                   labels[1]: float(np.var(acc_b, ddof=1))},
        welch_t=t, welch_df=df, p_value=p,
        time_ratio=wall_b / wall_a, failures=failures, config=config)
