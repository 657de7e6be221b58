"""Estimating how many categories the unlabelled data contains.

Labelled probe classes are mixed into the unlabelled data and anchored
k-means is run for every candidate count K in 0..k_max, using
``n_probe_classes + K`` clusters with the anchor classes pinned.  Each
run is scored twice: clustering accuracy on the validation probe rows,
and the Silhouette index on the unlabelled rows.  The two argmax
candidates are averaged (rounding half up), the clustering is rerun at
that count, and non-anchor clusters holding less than ``tau`` times the
largest unlabelled mass are discarded.  The surviving cluster count is
the estimate.

Accuracy on a crisp probe set can plateau at its maximum across many
candidates; plateau ties resolve toward the candidate closest to the
Silhouette optimum (then toward the smaller count), so an uninformative
probe score defers to the unlabelled-data evidence instead of dragging
the average toward zero.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureMatrix, LabeledSet, ProbeSplit
from .errors import ParameterError
from .kmeans import AnchorConstraints, constrained_kmeans
from .metrics import clustering_accuracy, silhouette
from .seeding import derive_seed

UNDEFINED_CVI = -1.0   # Silhouette sentinel when unlabelled rows span < 2 clusters


@dataclass
class SweepPoint:
    k_candidate: int
    probe_acc: float
    cvi: float
    inertia: float


@dataclass
class EstimationReport:
    sweep: list[SweepPoint]
    k_star_acc: int
    k_star_cvi: int
    k_hat: int
    k_final: int
    dropped_clusters: list[tuple[int, int]]
    n_non_anchor: int
    final_assignment: np.ndarray = field(repr=False, default=None)


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, FeatureMatrix) else np.asarray(data, dtype=np.float64)


def default_threads() -> int:
    """Worker cap from the DTC_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("DTC_THREADS", "1")))
    except ValueError:
        return 1


def _run_candidate(k, stacked, anchors, n_probe_classes, val_rows, val_labels,
                   unlabeled_slice, seed, n_init, max_iter):
    total_clusters = n_probe_classes + k
    result = constrained_kmeans(stacked, total_clusters, anchors,
                                seed=derive_seed(seed, "sweep", k),
                                n_init=n_init, max_iter=max_iter)
    acc, _ = clustering_accuracy(val_labels, result.assignment[val_rows])
    unl_assign = result.assignment[unlabeled_slice]
    if np.unique(unl_assign).size >= 2:
        cvi = silhouette(stacked[unlabeled_slice], unl_assign)
    else:
        cvi = UNDEFINED_CVI
    return SweepPoint(k, acc, cvi, result.inertia), result


def estimate_class_count(probe: LabeledSet, unlabeled, split: ProbeSplit,
                         k_max: int, tau: float = 0.01, seed: int = 0,
                         n_init: int = 10, max_iter: int = 300,
                         threads: int | None = None) -> EstimationReport:
    """Sweep candidate counts and return the pruned final estimate.

    Parameters
    ----------
    probe:
        Labelled rows covering at least the split's anchor and
        validation classes; rows of other classes are ignored.  Features
        must already be embeddings (apply the encoder first).
    unlabeled:
        Embedded unlabelled rows.
    split:
        Which probe classes are anchors and which are validation.
    k_max:
        Largest candidate count; the sweep covers 0..k_max inclusive.
    tau:
        Pruning threshold, as a fraction of the largest non-anchor
        cluster's unlabelled mass.
    """
    if k_max < 0:
        raise ParameterError(f"k_max must be non-negative, got {k_max}")
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must be in (0, 1), got {tau}")
    x_unlabeled = _values(unlabeled)

    anchor_classes = sorted(split.anchor_classes)
    validation_classes = sorted(split.validation_classes)
    class_to_anchor = {c: j for j, c in enumerate(anchor_classes)}
    probe_mask = np.isin(probe.labels, sorted(split.probe_classes))
    probe_rows = np.nonzero(probe_mask)[0]
    if not np.isin(probe.labels, validation_classes).any():
        raise ParameterError("validation probe set is empty")
    for c in anchor_classes:
        if not (probe.labels == c).any():
            raise ParameterError(f"anchor class {c} has no probe rows")

    probe_x = probe.features.values[probe_rows]
    probe_y = probe.labels[probe_rows]
    if probe_x.shape[1] != x_unlabeled.shape[1]:
        raise ParameterError(
            f"probe dim {probe_x.shape[1]} does not match unlabelled dim {x_unlabeled.shape[1]}"
        )
    stacked = np.vstack([probe_x, x_unlabeled])
    n_probe = probe_x.shape[0]
    n_probe_classes = len(anchor_classes) + len(validation_classes)

    anchor_local = np.nonzero(np.isin(probe_y, anchor_classes))[0]
    anchors = AnchorConstraints(
        anchor_local,
        np.array([class_to_anchor[int(c)] for c in probe_y[anchor_local]], dtype=np.int64),
    )
    val_rows = np.nonzero(np.isin(probe_y, validation_classes))[0]
    val_labels = probe_y[val_rows]
    unlabeled_slice = slice(n_probe, n_probe + x_unlabeled.shape[0])

    def run(k):
        return _run_candidate(k, stacked, anchors, n_probe_classes, val_rows,
                              val_labels, unlabeled_slice, seed, n_init, max_iter)

    candidates = range(k_max + 1)
    workers = threads if threads is not None else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, candidates))
    else:
        outcomes = [run(k) for k in candidates]
    sweep = [point for point, _ in outcomes]

    cvis = np.array([pt.cvi for pt in sweep])
    accs = np.array([pt.probe_acc for pt in sweep])
    k_star_cvi = int(np.argmax(cvis))
    best_acc = accs.max()
    tied = np.nonzero(accs == best_acc)[0]
    k_star_acc = int(tied[np.argmin(np.abs(tied - k_star_cvi))])
    k_hat = int(math.floor((k_star_acc + k_star_cvi) / 2.0 + 0.5))

    if k_hat <= k_max:
        _, final = outcomes[k_hat]
    else:  # unreachable with the argmax rules above, kept for safety
        _, final = run(k_hat)
    n_anchor_clusters = len(anchor_classes)
    total_clusters = n_probe_classes + k_hat
    unl_assign = final.assignment[unlabeled_slice]
    masses = np.bincount(unl_assign, minlength=total_clusters)
    non_anchor = np.arange(n_anchor_clusters, total_clusters)
    largest = masses[non_anchor].max() if non_anchor.size else 0
    dropped = [(int(c), int(masses[c])) for c in non_anchor
               if masses[c] < tau * largest]
    k_final = int(non_anchor.size - len(dropped))
    return EstimationReport(
        sweep=sweep,
        k_star_acc=k_star_acc,
        k_star_cvi=k_star_cvi,
        k_hat=k_hat,
        k_final=k_final,
        dropped_clusters=dropped,
        n_non_anchor=int(non_anchor.size),
        final_assignment=final.assignment,
    )


def sweep_report_to_csv(report: EstimationReport) -> str:
    """Render the sweep as CSV: one line per candidate, header included."""
    lines = ["K,probe_acc,cvi,inertia"]
    for pt in report.sweep:
        lines.append(f"{pt.k_candidate},{pt.probe_acc!r},{pt.cvi!r},{pt.inertia!r}")
    return "\n".join(lines) + "\n"
