"""A walk through the functional layers: shapes, caches and gradients."""

import numpy as np

from ecnn import layers as L
from ecnn.training import grad_check

rng = np.random.default_rng(0)

########### Convolution
x = rng.standard_normal((2, 1, 8, 8))           # N=2 grayscale 8x8 images
w = rng.standard_normal((4, 1, 3, 3))           # 4 filters, 3x3
b = np.zeros(4)
out, cache = L.conv_forward(x, w, b, stride=1, pad=1)
print("conv out", out.shape)                    # (2, 4, 8, 8): pad 1 keeps the extent

dx, dw, db = L.conv_backward(np.ones_like(out), cache)
print("grads", dx.shape, dw.shape, db.shape)   # match x, w, b
print("db = N*H*W per filter:", db)             # 2 * 8 * 8 = 128

########### ReLU and 2x2 max pooling
h, relu_cache = L.relu_forward(out)
p, pool_cache = L.maxpool_forward(h)
print("pooled", p.shape)                        # (2, 4, 4, 4)
tie = np.full((1, 1, 2, 2), 3.0)
_, c = L.maxpool_forward(tie)
print("ties route to the top-left cell:\n", L.maxpool_backward(np.ones((1, 1, 1, 1)), c)[0, 0])

########### Spatial batch norm
state = L.BatchNormState.fresh(4)
y, _ = L.spatial_batchnorm_forward(out, np.ones(4), np.zeros(4), state, "train")
print("per-channel mean", y.mean(axis=(0, 2, 3)).round(12))
print("per-channel var ", y.var(axis=(0, 2, 3)).round(6))
print("running mean after one batch", state.running_mean.round(4))

########### Inverted dropout
d, mask = L.dropout_forward(np.ones(10), 0.5, "train", rng)
print("train-mode dropout", d)                   # survivors scaled by 2
same, _ = L.dropout_forward(np.ones(3), 0.5, "eval", rng)
print("eval-mode dropout is the identity", same)

########### Softmax loss at uniform scores
loss, dscores = L.softmax_loss(np.zeros((4, 7)), np.array([0, 1, 2, 3]))
print(f"loss {loss:.4f} = ln 7 = {np.log(7):.4f}")

########### Whole-network finite differences
# biases feeding batch norm have zero true gradient, so float64 round-off in the
# finite differences dominates their relative error; extended precision fixes that
report = grad_check("conv:2x3x3,sbn,pool|fc:4,bn|input:8x8", n_samples=3, seed=1,
                    fd_dtype=np.longdouble)
for name, err in report.items():
    print(f"{name:<12} {err:.2e}")
