"""
Reverse-mode gradients on numpy arrays
======================================

A short tour of the autodiff engine that trains the classifier.
"""

import numpy as np

from detect import tensor as T
from detect.tensor import Tensor

# A Tensor wraps a float64 array.  Only tensors created with
# requires_grad=True collect gradients.
w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = (w * w).sum()
loss.backward()
print("d/dw sum(w^2) =", w.grad)

# Calling backward again recomputes rather than accumulates.
loss.backward()
print("after a second backward:", w.grad)

# Softmax subtracts the row max first, so huge logits stay finite.
print("softmax([1000, 0]) =", T.softmax(np.array([1000.0, 0.0])).data)

# Label-smoothed cross-entropy spreads eps/K of the target mass evenly.
probs = np.array([[0.8, 0.1, 0.1]])
print(f"smoothed CE = {T.smoothed_cross_entropy(probs, [0], epsilon=0.1):.6f}")

# The fused logits version is what training uses; its gradient is
# (softmax(z) - smoothed_target) / batch.
z = Tensor(np.log(probs), requires_grad=True)
T.smoothed_cross_entropy_logits(z, [0], 0.1).backward()
print("dL/dz =", z.grad)

# Any op can be checked against central differences.
x0 = np.random.default_rng(0).normal(size=(2, 3))
x = Tensor(x0.copy(), requires_grad=True)
T.gelu(x).sum().backward()
h = 1e-5
numeric = np.zeros_like(x0)
for idx in np.ndindex(x0.shape):
    up, down = x0.copy(), x0.copy()
    up[idx] += h
    down[idx] -= h
    numeric[idx] = (T.gelu(up).data.sum() - T.gelu(down).data.sum()) / (2 * h)
print("max |autodiff - numeric| for gelu:", np.abs(x.grad - numeric).max())
