"""
Reverse-mode differentiation on numpy arrays
============================================

Every op records how to push an output gradient back to its inputs.
`backward` walks that record once; `finite_diff_grad` gives the central
difference reference we compare against.
"""
import numpy as np

from megcn.autodiff import Param, Tensor, backward, contract_graph, finite_diff_grad, tsum
from megcn.gradcheck import relative_error, run_suite

rng = np.random.default_rng(0)

# A channel-wise graph aggregation: features [C, T, N] times adjacency [C, N, N].
F = Param(rng.normal(size=(3, 4, 5)), name="F")
A = Param(rng.normal(size=(3, 5, 5)), name="A")
w = Tensor(rng.normal(size=(3, 4, 5)))

loss = tsum(contract_graph(F, A) * w)
backward(loss)
print("loss", float(loss.data))


def loss_of_A(values):
    return float(tsum(contract_graph(F, Tensor(values)) * w).data)


numeric = finite_diff_grad(loss_of_A, A.data)
print("adjacency gradient, max relative error:", relative_error(A.grad, numeric))

# The packaged suite covers every op, each layer module and a two-layer model.
results = run_suite("tiny")
worst = max(results, key=lambda r: r.max_rel_error)
print(f"{len(results)} parameter groups checked; worst {worst.name} at {worst.max_rel_error:.2e}")
