"""
Reverse-mode gradients on a tape
================================

Every differentiable op in ``sccam.tensor`` records itself on the active
``Tape``. ``backward`` walks the tape once, in reverse, and fills ``.grad``.
Here we check that against central finite differences.
"""
import numpy as np

from sccam import tensor as T
from sccam.tensor import Tape, Tensor, backward

rng = np.random.default_rng(0)

#%%
# A small graph: 1x1 convolution, batch norm, ReLU, then a sum.
x = Tensor(rng.normal(size=(4, 1, 3, 5)))
k = Tensor(rng.normal(size=(2, 1)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
gamma = Tensor(np.ones(2), requires_grad=True)
beta = Tensor(np.zeros(2), requires_grad=True)
state = T.BatchNormState(2)


def loss_value():
    h = T.batch_norm(T.conv_pointwise(x, k, b), gamma, beta, state, "train")
    return T.tsum(T.mul(T.relu(h), T.relu(h)))


with Tape() as tape:
    loss = loss_value()
backward(tape, loss, [k, b, gamma, beta])
print("loss", loss.item())
print("dL/dk analytic", k.grad.ravel())

#%%
# Central differences on the kernel. Batch-norm running moments update on
# every train-mode call, but the loss only depends on the batch statistics.
step = 1e-6
numeric = np.zeros_like(k.data)
for i in np.ndindex(k.shape):
    orig = k.data[i]
    k.data[i] = orig + step
    up = loss_value().item()
    k.data[i] = orig - step
    down = loss_value().item()
    k.data[i] = orig
    numeric[i] = (up - down) / (2 * step)
print("dL/dk numeric ", numeric.ravel())
print("max abs difference", np.max(np.abs(numeric - k.grad)))

#%%
# The conv bias feeds batch norm, which subtracts the batch mean again, so
# its true gradient is zero.
print("dL/db", b.grad)

#%%
# A tape is single-use.
try:
    backward(tape, loss, [k])
except Exception as exc:
    print(type(exc).__name__, exc)
