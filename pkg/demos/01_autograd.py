"""Reverse-mode differentiation on numpy arrays.

Builds a tiny conv -> relu -> pool -> sigmoid graph by hand, back-propagates
a Dice loss through it, and checks the result against central finite
differences.
"""
import numpy as np

from rarunet import ops
from rarunet.adl import dice_loss
from rarunet.tensor import Tensor, grad_check

rng = np.random.default_rng(0)

# %% a hand-built graph
x = Tensor(rng.random((1, 1, 8, 8)))
w = Tensor(rng.standard_normal((2, 1, 3, 3)) * 0.5, requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
head = Tensor(rng.standard_normal((1, 2, 1, 1)), requires_grad=True)

feat = ops.maxpool2d(ops.relu(ops.conv2d(x, w, b, padding=1)))
prob = ops.sigmoid(ops.conv2d(feat, head))
target = np.zeros((1, 1, 4, 4))
target[0, 0, 1:3, 1:3] = 1

loss = dice_loss(prob, target)
loss.backward()
print("loss", round(loss.item(), 4))
print("d loss / d bias", np.round(b.grad, 4))

# %% the same gradients by finite differences (64-bit, eps 1e-5)
def fn(w, b, head):
    feat = ops.maxpool2d(ops.relu(ops.conv2d(x, w, b, padding=1)))
    return dice_loss(ops.sigmoid(ops.conv2d(feat, head)), target)

err = grad_check(fn, [Tensor(w.data.copy()), Tensor(b.data + 0.01), Tensor(head.data.copy())])
print(f"max relative error vs finite differences: {err:.2e}")

# %% the whole operation suite, as run by `rarunet gradcheck`
from rarunet.gradcheck import CASES  # noqa: E402

for name in ("conv2d 3x3 pad1", "conv_transpose2d", "attention (learned)"):
    print(f"{name:24s} {CASES[name]():.2e}")
