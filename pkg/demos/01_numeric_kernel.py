"""Tour of the numeric kernel: tensors, attention, and gradient checking.

Run from the repository root:  python3 demos/01_numeric_kernel.py
"""
import numpy as np

from msfk.kernel import (
    Tensor, matmul, transpose, softmax_rows, scaled_dot_attention,
    layer_norm, elementwise_max, finite_diff_grad, grad_affinity,
)

rng = np.random.default_rng(0)

# Tensors are immutable, validated, and refuse broadcasting.
a = Tensor([[1.0, 2.0], [3.0, 4.0]])
b = Tensor([[5.0], [6.0]])
print("matmul [[1,2],[3,4]] x [[5],[6]] =", matmul(a, b).tolist())

# Softmax is shift-invariant and numerically safe at extreme magnitudes.
logits = Tensor([[1000.0, 1000.0], [0.0, np.log(3.0)]])
print("softmax rows:", np.round(softmax_rows(logits).array, 4).tolist())

# Attention composes the same primitives: softmax(q k^T / sqrt(d)) v.
q = Tensor(rng.standard_normal((2, 4)))
k = Tensor(rng.standard_normal((5, 4)))
v = Tensor(rng.standard_normal((5, 4)))
attn = scaled_dot_attention(q, k, v)
print("attention output shape:", attn.shape)

# Layer norm maps every row to zero mean, unit variance.
x = Tensor(rng.uniform(-10, 10, size=(3, 6)))
normed = layer_norm(x)
print("row means after norm:", np.round(normed.array.mean(axis=1), 8).tolist())

# The element-wise max keeps a winner mask so its subgradient is exact.
left = Tensor([0.9, 0.1])
right = Tensor([0.5, 0.7])
values, mask = elementwise_max(left, right)
print("max", values.tolist(), "winner mask (1 = second operand):", mask.tolist())

# Finite differences verify the analytic gradient of the similarity map
# S = F T^T; the relative error sits at numerical noise level.
f = Tensor(rng.standard_normal((4, 3)))
t = Tensor(rng.standard_normal((4, 3)))
weighting = Tensor(rng.standard_normal((4, 4)))

def objective(f_var: Tensor) -> float:
    return float((matmul(f_var, transpose(t)).array * weighting.array).sum())

analytic, _ = grad_affinity(f, t, weighting)
numeric = finite_diff_grad(objective, f)
err = np.abs(analytic.array - numeric.array).max() / np.abs(numeric.array).max()
print(f"affinity gradient, max relative error vs finite differences: {err:.2e}")
