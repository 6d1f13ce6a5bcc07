"""
Checking gradients against finite differences
=============================================

The engine's analytic gradients for a conv + AdaCoF + Charbonnier chain are
compared to central differences in float64.
"""

import numpy as np

from cdfi.adacof import AdaCoFParams, adacof_backward, adacof_forward
from cdfi.engine import Tensor, conv2d, precision
from cdfi.losses import charbonnier

rng = np.random.default_rng(1)


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


with precision(np.float64):
    x = rng.random((1, 2, 6, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    target = rng.random((1, 3, 4, 4))

    def loss_value():
        return float(charbonnier(conv2d(Tensor(x), Tensor(k)), Tensor(target), 1e-3).data)

    kt = Tensor(k, requires_grad=True)
    charbonnier(conv2d(Tensor(x), kt), Tensor(target), 1e-3).backward()
    fd = central_difference(loss_value, k)
    print("conv + charbonnier, kernel grad rel error:", np.abs(kt.grad - fd).max() / np.abs(fd).max())

# AdaCoF: the offset gradient is only defined off the integer lattice
F, d = 3, 1
img = rng.random((1, 1, 5, 5))
w = rng.random((1, 9, 5, 5))
a = rng.uniform(-1, 1, (1, 9, 5, 5))
b = rng.uniform(-1, 1, (1, 9, 5, 5))
a += 0.37 - (a - np.floor(a))  # push every offset to a fractional .37
r = rng.normal(size=img.shape)

_, gw, ga, gb = adacof_backward(r, img, AdaCoFParams(w, a, b, F, d))
for name, arr, got in (("W", w, gw), ("alpha", a, ga), ("beta", b, gb)):
    fd = central_difference(lambda: float((adacof_forward(img, AdaCoFParams(w, a, b, F, d)) * r).sum()), arr)
    print(f"adacof d/d{name}: rel error {np.abs(got - fd).max() / np.abs(fd).max():.2e}")
