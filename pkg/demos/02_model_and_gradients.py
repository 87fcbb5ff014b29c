"""
The double-wing mixture of experts
==================================

Builds a small model, looks at its gating weights and checks the hand-written
backward pass against central finite differences.
"""
import numpy as np

from vrsdwmoe.dwmoe import DwmoeModel, ModelConfig
from vrsdwmoe.nn import gradient_check
from vrsdwmoe.train import batch_loss_and_grads

model = DwmoeModel(ModelConfig(n_users=6, n_items=8, n_e=3, dim=8, widths=(8, 4)), seed=0)
print("parameters:", model.n_parameters())

# the user-side gate depends on the item being scored through the interference layer
rng = np.random.default_rng(1)
for p in model.params.values():
    p[...] = rng.uniform(-0.5, 0.5, p.shape)
fwd = model.forward(np.zeros(3, dtype=int), np.array([0, 1, 2]))
print("user gates for user 0 against items 0,1,2:\n", np.round(fwd.g_user, 3))
print("predictions:", np.round(fwd.yhat, 4))

# analytic gradients of cross-entropy + 0.01 * gate std vs finite differences
users, items = rng.integers(6, size=10), rng.integers(8, size=10)
labels = rng.integers(2, size=10)
_, grads = batch_loss_and_grads(model, users, items, labels, gamma=0.01)
report = gradient_check(
    lambda: batch_loss_and_grads(model, users, items, labels, 0.01, with_grads=False)[0].loss_total,
    grads, model.params)
worst = max(report, key=report.get)
print(f"largest relative error: {report[worst]:.2e} ({worst})")
