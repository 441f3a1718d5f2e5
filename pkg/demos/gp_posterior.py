"""GP posterior over latent vectors: basis selection, posterior, and the two losses.

Run: python3 demos/gp_posterior.py
"""
import numpy as np

from lmtgp import gp

rng = np.random.default_rng(0)
d = 16
candidates = rng.normal(0.0, 1 / np.sqrt(d), size=(12, d))
# two exact copies; the greedy selector only takes them when nothing else is left
candidates[5] = candidates[2]
candidates[9] = candidates[2]

model = gp.select_basis(candidates, gp.GpConfig(basis_size=6, noise_variance=0.01))
print("chosen basis rows:", model.indices)

for label, z in (("basis row", model.basis[0]),
                 ("near basis", model.basis[0] + 0.05 * rng.normal(size=d)),
                 ("far away", 3.0 * rng.normal(size=d))):
    post = gp.posterior(model, z)
    print(f"{label:>10}: variance {post.variance:.4f}  "
          f"variant loss vs itself {gp.gpr_loss_variant(post, z):.4f}  "
          f"full loss {gp.gpr_loss_full(post, z):.4f}")

# far from every basis row the mean shrinks to zero and the variance to 1 + noise
