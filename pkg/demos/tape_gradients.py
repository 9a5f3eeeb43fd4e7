# Reverse-mode gradients on the numpy tape, checked against central differences.
#
#   python3 demos/tape_gradients.py

import numpy as np

from transfornn import tensor as T
from transfornn.tensor import Tensor

rng = np.random.default_rng(0)

# float64 leaves so the finite differences are clean
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True, dtype=np.float64)
w = Tensor(rng.normal(size=(3, 5)), requires_grad=True, dtype=np.float64)
targets = np.array([0, 4, 2, 1])


def loss_of(_):
    h = T.tanh(T.matmul(x, w))
    return T.cross_entropy(h, targets)


with T.new_tape() as tape:
    loss = loss_of(None)
    T.backward(loss, tape)
print("loss", loss.item())

for name, leaf in [("x", x), ("w", w)]:
    numeric = T.finite_difference_grad(loss_of, leaf, h=1e-3).data
    err = T.relative_error(leaf.grad, numeric).max()
    print(f"{name}: grad shape {leaf.grad.shape}, worst relative error vs finite differences {err:.2e}")

# Inside no_grad nothing is recorded, so there is nothing to backpropagate.
with T.no_grad():
    y = T.matmul(x, w)
print("recorded under no_grad:", y.requires_grad)
