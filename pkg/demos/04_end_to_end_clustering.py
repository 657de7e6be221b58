"""Full pipeline on synthetic data, all four training variants.

Pretrain a small encoder on five labelled classes, then discover five
different unlabelled classes: install a PCA bottleneck, seed prototypes
with k-means, and anneal.  The variants differ in how they stabilize the
annealing: input-noise consistency (pi), consistency against a prediction
ensemble (te), or targets built from the ensemble (tep).
"""

import numpy as np

from transfercluster import (
    TrainConfig,
    clustering_accuracy,
    initialize,
    nmi,
    predict,
    pretrain_encoder,
    synth_mixture,
    train,
)

SEED = 5
labeled, unlabeled, truth = synth_mixture(5, 5, 100, 20, 2.8, seed=SEED)
print("separation 2.8: close enough that plain k-means makes real mistakes\n")

encoder = pretrain_encoder(labeled, seed=SEED)

config = TrainConfig(k=5, warmup_epochs=10, main_epochs=90, seed=SEED)
ready, protos, _ = initialize(encoder, unlabeled, config)
init_labels, _ = predict(ready, protos, unlabeled)
init_acc, _ = clustering_accuracy(truth, init_labels)
print(f"k-means initialization: ACC {init_acc:.3f}  NMI {nmi(truth, init_labels):.3f}")

for variant in ("baseline", "pi", "te", "tep"):
    cfg = TrainConfig(k=5, variant=variant, warmup_epochs=10, main_epochs=90, seed=SEED)
    trace = train(ready, protos, unlabeled, cfg)
    acc, _ = clustering_accuracy(truth, trace.assignments)
    first_main = next(r for r in trace.records if r.phase == "main")
    print(f"{variant:8s}: ACC {acc:.3f}  NMI {nmi(truth, trace.assignments):.3f}  "
          f"KL {first_main.kl_loss:.4f} -> {trace.records[-1].kl_loss:.4f}")

print("\ncluster sizes from the baseline run:")
cfg = TrainConfig(k=5, seed=SEED)
trace = train(ready, protos, unlabeled, cfg)
print(np.bincount(trace.assignments, minlength=5).tolist(), "(truth: 100 each)")
