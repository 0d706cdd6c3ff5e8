"""
The reverse-mode tensor engine on its own: ops, gradients, checks and precision
"""

import numpy as np

from modeforge import autodiff as ad
from modeforge.autodiff import Tensor

rng = np.random.default_rng(0)

## A small expression and its gradient
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = ad.cross_entropy(x @ w, [0, 1, 1])
loss.backward()
print("loss", loss.item())
print("dL/dw\n", np.round(w.grad, 4))

## Compare against central differences
def f():
    return ad.cross_entropy(x @ w, [0, 1, 1])
print("relative errors", ad.check_gradients(f, [x, w]))

## A causal dilated convolution never looks ahead
signal = Tensor(rng.normal(size=(1, 2, 16)))
kernel = Tensor(rng.normal(size=(3, 2, 4)))
y0 = ad.conv1d(signal, kernel, dilation=2, padding="causal").data
signal.data[..., 10:] += 1.0
y1 = ad.conv1d(signal, kernel, dilation=2, padding="causal").data
print("outputs before t=10 unchanged:", np.array_equal(y0[..., :10], y1[..., :10]))

## The selective scan is a linear-time recurrence
b, T, D, N = 1, 6, 2, 3
u = Tensor(rng.normal(size=(b, T, D)), requires_grad=True)
delta = Tensor(rng.uniform(0.1, 0.5, size=(b, T, D)))
A = Tensor(-np.arange(1.0, N + 1) * np.ones((D, 1)))
B = Tensor(rng.normal(size=(b, T, N)))
C = Tensor(rng.normal(size=(b, T, N)))
ad.selective_scan(u, delta, A, B, C).sum().backward()
print("d(sum y)/du\n", np.round(u.grad[0], 4))

## NaN is an error, not a value
try:
    ad.log(Tensor(np.array([-1.0])))
except FloatingPointError as exc:
    print("caught:", exc)

## Opt-in float32 block
with ad.precision("float32"):
    z = Tensor(np.ones(3)) * 2.0
print("dtype inside the block:", z.data.dtype)
