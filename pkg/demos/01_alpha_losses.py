"""How the alpha loss interpolates between dropout VI and predictive log-likelihood.

Each row of ``ll`` holds K log-likelihoods of one data point, one per
dropout mask. Small alpha averages them (VI); alpha = 1 averages the
likelihoods themselves, which rewards masks that explain the point well.
"""
import numpy as np

from alphabox.numerics import RngStream
from alphabox.objective import classification_loss

rng = RngStream(0)
ll = -rng.uniform((4, 10)) * 3.0

for alpha in (0.0, 1e-3, 0.5, 1.0, 2.0):
    print(f"alpha={alpha:<6} loss={classification_loss(ll, alpha):.6f}")

# with one sample there is nothing to average, so every alpha gives the VI loss
one = ll[:, :1]
print("K=1:", {a: round(classification_loss(one, a), 12) for a in (0.0, 0.5, 1.0)})

# alpha = 1 is minus the log of the MC predictive probability
print("alpha=1 direct:", -np.sum(np.log(np.mean(np.exp(ll), axis=1))))
