"""
Sparse solutions from the orthant-wise l1 step
==============================================

For f(x) = sum_i h_i (x_i - a_i)^2 / 2 + lam * |x|_1 the minimiser is known
in closed form: soft-threshold a_i by lam / h_i. The optimizer should land
there, with coordinates below the threshold set to exactly zero instead of
dithering around it.
"""

import numpy as np

from cdfi.optim import OptState, l1_orthant_step

rng = np.random.default_rng(4)
a = rng.normal(size=12)
h = rng.uniform(0.5, 2.0, size=12)
lam = 0.5

x = np.zeros_like(a)
state = OptState()
for step in range(400):
    l1_orthant_step([x], [h * (x - a)], lam, 0.4, state, base="sgd")

closed = np.sign(a) * np.maximum(np.abs(a) - lam / h, 0.0)
print("   a_i    solution   closed form")
for ai, xi, ci in zip(a, x, closed):
    print(f"{ai:+.3f}   {xi:+.6f}   {ci:+.6f}")
print("max deviation:", np.abs(x - closed).max())
print("exact zeros:", int((x == 0).sum()), "of", int((closed == 0).sum()), "expected")
