"""Report rendering: summary tables, plot-ready CSVs and PNG figures.

Consumes the JSON written by the compare command. Emits per-figure CSVs
(accuracy-vs-iteration pairs for the first seed of each variant, and a
shared-bin histogram of per-seed mean accuracies) plus the corresponding
matplotlib renders saved next to them.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class ReportDataError(ValueError):
    """The report JSON is missing the pieces rendering needs."""


def _summary_accuracies(report, label):
    rows = report.get("summaries", {}).get(label, [])
    return [row["mean_accuracy"] for row in rows]


def validate_report(report):
    labels = report.get("labels")
    if not labels or len(labels) != 2:
        raise ReportDataError("report: expected exactly two variant labels")
    for label in labels:
        if not _summary_accuracies(report, label):
            raise ReportDataError(f"report: variant {label!r} has no seed summaries")
    return labels


def render_table(report, timing=None):
    """Text table mirroring one row per variant plus the test statistics."""
    labels = validate_report(report)
    stats = report["statistics"]
    lines = [f"{'variant':<16} {'mean acc':>10} {'variance':>12} {'seeds':>6}"]
    for label in labels:
        n = len(report["summaries"][label])
        lines.append(f"{label:<16} {stats['means'][label]:>10.4f} "
                     f"{stats['variances'][label]:>12.3e} {n:>6d}")
    lines.append(f"welch t = {stats['welch_t']:.4f}, df = {stats['welch_df']:.2f}, "
                 f"p ({stats['sidedness']}) = {stats['p_value']:.3e}")
    lines.append(f"accuracy gap ({labels[1]} - {labels[0]}) = "
                 f"{stats['accuracy_gap']:+.4f}")
    if timing and timing.get("time_ratio") is not None:
        lines.append(f"time ratio ({labels[1]} / {labels[0]}) = "
                     f"{timing['time_ratio']:.2f}")
    failures = report.get("failures", {})
    failed = {label: len(failures.get(label, [])) for label in labels}
    if any(failed.values()):
        lines.append(f"excluded diverged runs: " +
                     ", ".join(f"{label}: {n}" for label, n in failed.items()))
    return "\n".join(lines)


def write_curve_csv(report, path):
    """Accuracy-vs-iteration for the first seed of each variant.

    Columns: iteration, accuracy_a, accuracy_b, difference (b - a).
    """
    labels = validate_report(report)
    curves = report.get("curves", {})
    first = []
    for label in labels:
        per_variant = curves.get(label) or []
        if not per_variant:
            raise ReportDataError(f"report: variant {label!r} has no curves")
        first.append(per_variant[0])
    its_a, its_b = first[0]["iterations"], first[1]["iterations"]
    if its_a != its_b:
        raise ReportDataError("report: first-seed curves disagree on iterations")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "accuracy_a", "accuracy_b", "difference"])
        for it, a, b in zip(its_a, first[0]["accuracies"], first[1]["accuracies"]):
            writer.writerow([it, repr(a), repr(b), repr(b - a)])
    return path


def write_histogram_csv(report, path, bins=20):
    """Shared-bin histogram of per-seed mean accuracies, edges covering
    [min, max] of all summaries."""
    labels = validate_report(report)
    acc_a = _summary_accuracies(report, labels[0])
    acc_b = _summary_accuracies(report, labels[1])
    lo = min(min(acc_a), min(acc_b))
    hi = max(max(acc_a), max(acc_b))
    if hi == lo:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, bins + 1)
    count_a, _ = np.histogram(acc_a, bins=edges)
    count_b, _ = np.histogram(acc_b, bins=edges)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_left", "bin_right", f"count_{labels[0]}",
                         f"count_{labels[1]}"])
        for i in range(bins):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             int(count_a[i]), int(count_b[i])])
    return path


def render_figures(report, out_dir):
    """PNG renders of the curve and histogram CSV content; returns the paths."""
    labels = validate_report(report)
    paths = []

    curves = report.get("curves", {})
    if curves.get(labels[0]) and curves.get(labels[1]):
        a, b = curves[labels[0]][0], curves[labels[1]][0]
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 6),
                                          height_ratios=[2, 1])
        top.plot(a["iterations"], a["accuracies"], color="tab:blue", label=labels[0])
        top.plot(b["iterations"], b["accuracies"], color="tab:red", linestyle="--",
                 label=labels[1])
        top.set_ylabel("test accuracy")
        top.legend(loc="lower right")
        diff = [y - x for x, y in zip(a["accuracies"], b["accuracies"])]
        bottom.plot(a["iterations"], diff, color="tab:green")
        bottom.axhline(0.0, color="gray", linewidth=0.8)
        bottom.set_xlabel("iteration")
        bottom.set_ylabel("difference")
        fig.tight_layout()
        path = os.path.join(out_dir, "accuracy_curves.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    acc_a = _summary_accuracies(report, labels[0])
    acc_b = _summary_accuracies(report, labels[1])
    lo, hi = min(min(acc_a), min(acc_b)), max(max(acc_a), max(acc_b))
    if hi == lo:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, 21)
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.hist(acc_a, bins=edges, alpha=0.6, color="tab:blue", label=labels[0])
    ax.hist(acc_b, bins=edges, alpha=0.6, color="tab:red", label=labels[1])
    ax.set_xlabel("mean accuracy past burn-in")
    ax.set_ylabel("runs")
    ax.legend(loc="upper left")
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy_histogram.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def write_seed_csv(report, path):
    """Per-seed summary rows for both variants."""
    labels = validate_report(report)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "seed_index", "seed", "mean_accuracy",
                         "final_accuracy"])
        for label in labels:
            for index, row in enumerate(report["summaries"][label], start=1):
                writer.writerow([label, index, row["seed"],
                                 repr(row["mean_accuracy"]),
                                 repr(row["final_accuracy"])])
    return path
