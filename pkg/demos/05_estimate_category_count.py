"""Estimate how many categories hide in unlabelled data, using probes.

Five labelled probe classes are mixed into the unlabelled rows; four are
anchored to their own clusters while one plays validation.  Anchored
k-means runs for every candidate count, each run scored by validation
accuracy and by the Silhouette of the unlabelled rows.  The two optima
are averaged, the clustering reruns at that count, and near-empty
clusters are pruned away.
"""

import numpy as np

from transfercluster import FeatureMatrix, ProbeSplit, estimate_class_count, synth_mixture
from transfercluster.estimator import sweep_report_to_csv

K_TRUE = 6
labeled, unlabeled, truth = synth_mixture(5, K_TRUE, 150, 32, 6.0, seed=12)

# Probe classes carry more rows than the novel ones; light novel classes
# keep anchored clusters from quietly swallowing whole novel structures.
rows = np.concatenate([np.nonzero(truth == c)[0][:50] for c in range(K_TRUE)])
novel = FeatureMatrix(unlabeled.values[rows], tuple(unlabeled.ids[i] for i in rows))

split = ProbeSplit(anchor_classes=frozenset({0, 1, 2, 3}),
                   validation_classes=frozenset({4}))
report = estimate_class_count(labeled, novel, split, k_max=15, tau=0.01, seed=12)

print(f"true novel category count: {K_TRUE}")
print(f"validation-accuracy optimum K*_a = {report.k_star_acc}")
print(f"silhouette optimum        K*_v = {report.k_star_cvi}")
print(f"averaged candidate        K^   = {report.k_hat}")
print(f"clusters after pruning    -> estimate {report.k_final}")
if report.dropped_clusters:
    print("pruned clusters (id, unlabelled mass):", report.dropped_clusters)

print("\nsweep table:")
print(sweep_report_to_csv(report))
