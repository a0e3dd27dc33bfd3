"""
Frechet distance between Gaussian summaries
===========================================

Fit a Gaussian to two sets of slide descriptors and compare them with the
Frechet distance. For diagonal covariances the distance has a closed form,
which makes a handy sanity check.
"""
import numpy as np

from milshift import GaussianSummary, frechet_distance, gaussian_fit, sqrtm_psd

rng = np.random.default_rng(0)

#%%
# Two diagonal Gaussians: unit variance against variance 4 on the first axis,
# with the mean moved by 3 along the same axis.
a = GaussianSummary(np.zeros(2), np.eye(2), 2)
b = GaussianSummary(np.array([3.0, 0.0]), np.diag([4.0, 1.0]), 2)
print("analytic:", 3.0 ** 2 + (2.0 - 1.0) ** 2)
print("computed:", frechet_distance(a, b))

#%%
# With samples instead of exact parameters the estimate converges as the
# number of slides grows.
for w in (100, 1_000, 10_000):
    x = rng.standard_normal((w, 2))
    y = rng.standard_normal((w, 2)) * [2.0, 1.0] + [3.0, 0.0]
    print(w, frechet_distance(gaussian_fit(x), gaussian_fit(y)))

#%%
# The matrix square root clamps round-off eigenvalues, so rank-deficient
# covariances (fewer slides than dimensions) are handled.
z = rng.standard_normal((5, 20))
c = z.T @ z
s = sqrtm_psd(c)
print("relative residual:", np.linalg.norm(s @ s - c) / np.linalg.norm(c))
