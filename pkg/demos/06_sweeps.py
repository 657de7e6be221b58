"""Sensitivity sweeps: bottleneck width and assumed cluster count.

Two questions worth asking of any run: how wide should the bottleneck
be, and what happens if the assumed number of clusters is wrong?  The
bottleneck question only has teeth when the category structure spans
fewer directions than the data carries, so here the ten class means
live in a 10-dimensional subspace and thirty more dimensions hold pure
noise.  Short answers, on synthetic data: match the bottleneck to the
category count, and when unsure about the count, guessing high hurts
less than guessing low.
"""

import numpy as np

from transfercluster import (
    EncoderParams,
    FeatureMatrix,
    TrainConfig,
    clustering_accuracy,
    initialize,
    pretrain_encoder,
    synth_mixture,
    train,
)
from transfercluster.seeding import rng_for

K_TRUE = 10


def run(encoder, unlabeled, truth, k, bottleneck, seed):
    cfg = TrainConfig(k=k, bottleneck_dim=bottleneck, warmup_epochs=5,
                      main_epochs=25, seed=seed)
    ready, protos, _ = initialize(encoder, unlabeled, cfg)
    trace = train(ready, protos, unlabeled, cfg)
    return clustering_accuracy(truth, trace.assignments)[0]


print(f"true category count: {K_TRUE}\n")

# Structure in 10 dimensions, 30 noise dimensions appended.
_, unlabeled, truth = synth_mixture(5, K_TRUE, 50, 10, 5.0, seed=6301)
noise = 2.0 * rng_for(1, "pad").standard_normal((unlabeled.n_rows, 30))
padded = FeatureMatrix(np.hstack([unlabeled.values, noise]), unlabeled.ids)
identity = EncoderParams([], None, 40)

print("bottleneck sweep (k fixed at the true count):")
for c in (2, 5, 10, 15, 20):
    acc = run(identity, padded, truth, K_TRUE, c, seed=1)
    print(f"  c = {c:2d}: ACC {acc:.3f}" + ("   <- c = K" if c == K_TRUE else ""))

# For the count sweep the usual full-rank mixture works as is.
labeled, unlabeled, truth = synth_mixture(5, K_TRUE, 50, 20, 6.0, seed=6105)
encoder = pretrain_encoder(labeled, seed=5)

print("\ncluster-count sweep (bottleneck follows k):")
for k in (6, 8, 10, 12, 14):
    acc = run(encoder, unlabeled, truth, k, None, seed=5)
    print(f"  k = {k:2d}: ACC {acc:.3f}" + ("   <- true K" if k == K_TRUE else ""))
