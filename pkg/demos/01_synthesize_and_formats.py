"""Generate a synthetic mixture, inspect it, and round-trip both file formats.

The generator draws one isotropic unit-variance Gaussian cluster per class
and places class means at least `separation` standard deviations apart, so
"separation 6" literally means six sigmas between the closest class means.
A nearest-class-mean classifier on the ground truth tells us how hard the
unlabelled part is before any learning happens.
"""

import tempfile
from pathlib import Path

import numpy as np

from transfercluster import load_features, load_labeled, save_features, synth_mixture

labeled, unlabeled, truth = synth_mixture(
    n_labeled_classes=5, n_unlabeled_classes=5, per_class=100,
    dim=20, separation=6.0, seed=7,
)
print(f"labelled set: {labeled.features.n_rows} rows, "
      f"{labeled.n_classes} classes, dim {labeled.features.dim}")
print(f"unlabelled set: {unlabeled.n_rows} rows (ground truth hidden from the pipeline)")

means = np.stack([unlabeled.values[truth == c].mean(axis=0) for c in range(5)])
d2 = ((unlabeled.values[:, None, :] - means[None]) ** 2).sum(axis=2)
oracle_acc = (d2.argmin(axis=1) == truth).mean()
print(f"nearest-class-mean oracle accuracy on the unlabelled rows: {oracle_acc:.4f}")

gaps = [np.linalg.norm(means[i] - means[j]) for i in range(5) for j in range(i + 1, 5)]
print(f"closest unlabelled class means: {min(gaps):.2f} sigmas apart")

with tempfile.TemporaryDirectory() as tmp:
    csv_path = Path(tmp) / "unlabeled.csv"
    bin_path = Path(tmp) / "unlabeled.dtcf"
    save_features(csv_path, unlabeled, "csv")
    save_features(bin_path, unlabeled, "binary")
    csv_back = load_features(csv_path, "csv")
    bin_back = load_features(bin_path, "binary")
    print(f"CSV round-trip exact: {np.array_equal(csv_back.values, unlabeled.values)}")
    print(f"binary round-trip exact: {np.array_equal(bin_back.values, unlabeled.values)}")
    print(f"CSV is {csv_path.stat().st_size} bytes, binary is {bin_path.stat().st_size} bytes")

    labeled_path = Path(tmp) / "labeled.csv"
    save_features(labeled_path, labeled.features, "csv", labels=labeled.labels)
    back = load_labeled(labeled_path, "csv")
    print(f"label column round-trips: {np.array_equal(back.labels, labeled.labels)}")
