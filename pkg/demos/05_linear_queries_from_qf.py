"""Answer linear queries with nothing but a quadratic-form protocol."""
import numpy as np

from pairwise_ldp import Dataset
from pairwise_ldp.kernels import svd_fact
from pairwise_ldp.protocols import NonInteractiveQuadraticForm, linear_query_protocol, lq_from_qf_reduction

rng = np.random.default_rng(5)
k, n = 6, 5000
A = rng.standard_normal((k, k))
W = (A + A.T) / 4
data = Dataset(rng.integers(1, k + 1, n), k)
truth = W[:, data.index].mean(axis=1)

F = svd_fact(W)
qf = NonInteractiveQuadraticForm(F, 1.0, W)
red = lq_from_qf_reduction(qf, data, 1.0, seed=0)
direct = linear_query_protocol(F, data, 1.0, seed=0)

np.set_printoptions(precision=3, suppress=True)
print("truth     ", truth)
print("reduction ", red.value)
print("direct    ", direct.value)
print("epsilon spent:", red.epsilon_spent, direct.epsilon_spent)
