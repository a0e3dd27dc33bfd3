"""
Choosing evidence patches
=========================

A slide is a bag of patch features plus one attention score per patch.
Selectors pick which patches describe the slide, and an aggregation turns
them into one descriptor row.
"""
import numpy as np

from milshift import FeatureConfig, PatchBag, aggregate, select_evidence, selection_indices

attention = np.array([0.5, 0.1, 0.9, 0.3, 0.7])
features = np.arange(10, dtype=np.float32).reshape(5, 2)
bag = PatchBag("demo", features, attention.astype(np.float32), np.array([0.2, 0.8]))

#%%
# Positive evidence takes the most attended patches, negative the least.
# Combined splits K between the two ends.
for selector in ("positive_evidence", "negative_evidence", "combined_evidence"):
    cfg = FeatureConfig(selector, 4)
    print(cfg.label(), selection_indices(attention, cfg))

#%%
# Mean aggregation averages the selected rows; concat keeps them side by side.
rows = select_evidence(bag, FeatureConfig("positive", 2))
print(rows)
print(aggregate(rows, "mean"))
print(aggregate(rows, "concat"))

#%%
# The random selector is keyed on the seed and slide id, so repeated runs
# pick the same patches.
cfg = FeatureConfig("random", 3, seed=7)
print(selection_indices(attention, cfg, "demo"), selection_indices(attention, cfg, "demo"))
