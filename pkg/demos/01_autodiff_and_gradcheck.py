"""A tour of the tensor engine: build a graph, backprop, check against finite differences."""

import numpy as np

from promptlab import tensor as T

rng = np.random.default_rng(0)

############## forward graph ##############
# Everything is float64 and dense. Only leaves created with requires_grad=True
# collect gradients; the rest of the graph is bookkeeping.

w = T.Tensor(rng.standard_normal((4, 3)), requires_grad=True, name="w")
x = T.Tensor(rng.standard_normal((5, 4)), name="x")
labels = np.array([0, 2, 1, 1, 0])

logits = T.matmul(x, w)
loss = T.cross_entropy(logits, labels)
print("loss:", loss.item())

############## reverse pass ##############
loss.backward()
print("dloss/dw has shape", w.grad.shape)
print("gradient norm:", np.linalg.norm(w.grad))

############## numeric check ##############
# Central differences, one coordinate at a time. Slow and exact enough.

step = 1e-5
numeric = np.zeros_like(w.data)
flat, out = w.data.reshape(-1), numeric.reshape(-1)
for i in range(flat.size):
    keep = flat[i]
    flat[i] = keep + step
    up = T.cross_entropy(T.matmul(x, w), labels).item()
    flat[i] = keep - step
    down = T.cross_entropy(T.matmul(x, w), labels).item()
    flat[i] = keep
    out[i] = (up - down) / (2 * step)

err = np.linalg.norm(w.grad - numeric) / np.linalg.norm(numeric)
print(f"relative error vs finite differences: {err:.2e}")
assert err < 1e-6

############## a taste of the op set ##############
a = T.Tensor(rng.standard_normal((2, 6)), requires_grad=True)
h = T.gelu(T.matmul(a, T.Tensor(rng.standard_normal((6, 6)))))
h = T.layer_norm(h, T.Tensor(np.ones(6)), T.Tensor(np.zeros(6)))
u = T.l2_normalize(h, axis=-1)
print("unit rows:", np.linalg.norm(u.data, axis=-1))
T.tsum(u).backward()
print("grad flowed back through norm/gelu/matmul:", np.abs(a.grad).sum() > 0)
