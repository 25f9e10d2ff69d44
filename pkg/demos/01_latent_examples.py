"""Latent examples on a 2-D toy set.

Each class is summarized by a handful of latent examples: cluster centers
estimated under the current metric, with a proximal pull toward their
previous positions. The per-cluster mean squared distance of the members
is the data-dependent part of each anchor's margin.
"""

import numpy as np

from mapml import Dataset, Metric, TrainConfig, init_latents, run_latent_stage

rng = np.random.default_rng(0)

# two classes, each a mixture of two blobs
centers = {0: [(-3.0, 0.0), (-1.0, 2.5)], 1: [(2.5, 0.5), (4.0, -1.5)]}
feats, labels = [], []
for label, blobs in centers.items():
    for cx, cy in blobs:
        feats.append(rng.normal((cx, cy), 0.4, size=(40, 2)))
        labels.append(np.full(40, label))
data = Dataset(np.concatenate(feats), np.concatenate(labels))
print(f"dataset: {data.n} points, {data.n_classes} classes")

# tau is the percent ratio of latent to original examples; 2.5% of 160
# points gives two latents per class, one per blob if seeding spreads well
cfg = TrainConfig(tau=2.5, gamma=0.0, latent_em_iters=8)
model = init_latents(data, cfg.tau, seed=1)
print("\nfarthest-point seeds (before any refinement):")
for o in range(model.m):
    print(f"  latent {o} (class {model.latent_labels[o]}): {np.round(model.latents[o], 2)}")

model = run_latent_stage(data, model, Metric.identity(2), cfg)
print("\nafter one latent stage (assignment/update sweeps):")
for o in range(model.m):
    members = int((model.membership == o).sum())
    print(f"  latent {o} (class {model.latent_labels[o]}): "
          f"{np.round(model.latents[o], 2)}  members={members}  "
          f"margin={model.cluster_margins[o]:.3f}")

print("\neach latent should sit at a blob center, with the margin close to")
print(f"the blob's expected squared spread 2*sigma^2 = {2 * 0.4**2:.3f}")
