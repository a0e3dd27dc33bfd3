"""
Sweeping the number of evidence patches
=======================================

How FDD responds to K for each selector on one shifted pair. The same data
is available from the command line with ``milshift sweep-k``.
"""
from milshift import FeatureConfig, SynthConfig, fdd, generate_dataset

ref = generate_dataset(SynthConfig(dataset_id="ref"))
tgt = generate_dataset(SynthConfig(shift_level=1.0, dataset_id="tgt"))

#%%
for selector in ("positive_evidence", "negative_evidence", "random"):
    row = [fdd(ref, tgt, FeatureConfig(selector, k)) for k in (1, 4, 16, 64, 128)]
    print(f"{selector:18s}", " ".join(f"{v:8.3f}" for v in row))

#%%
# mean_patch ignores K entirely and serves as the attention-free baseline.
print("mean_patch        ", round(fdd(ref, tgt, FeatureConfig("mean_patch")), 3))
