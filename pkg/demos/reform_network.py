"""
From sparse kernels to a thinner network
========================================

Zero out a random share of every layer's kernels and measure the density.
The reform pass then walks the layer graph from the output back to the input,
and each layer keeps ceil(density * C_in) of its input channels.
Producers feeding several consumers keep the largest demand, so every edge
still lines up.
"""

import numpy as np

from cdfi.compress import instantiate_reformed, measure_density, reform
from cdfi.network.model import InterpNet
from cdfi.network.spec import ModelConfig

model = InterpNet(ModelConfig(pyramid=False, path_selection=False), seed=0)
rng = np.random.default_rng(0)
for name, p in model.params.items():
    if name.endswith(".weight"):
        keep = rng.uniform(0.1, 0.5)
        p.data *= rng.random(p.data.shape) < keep

report = measure_density(model)
plan, spec = reform(model.spec, report)

print(f"overall density {report.overall_density:.3f}")
print(f"{'layer':12s} {'density':>8s} {'C_in':>6s} {'->':>3s} {'new':>5s}")
for row in report.layers[:12]:
    print(f"{row.layer:12s} {row.density:8.3f} {row.c_in:6d}     {row.reformed_c_in:5d}")
print("...")
print(f"parameters {plan.params_before} -> {plan.params_after} "
      f"({100 * plan.params_after / plan.params_before:.1f}%)")

thin = instantiate_reformed(plan)
frames = np.random.default_rng(1).random((2, 1, 3, 64, 64)).astype(np.float32)
print("reformed model runs:", thin.predict(frames[0], frames[1]).shape,
      "params", thin.parameter_count())
