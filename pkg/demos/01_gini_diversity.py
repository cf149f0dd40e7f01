"""Estimate Gini diversity of a categorical population under local privacy.

Every user holds one of k categories. The analyst wants the probability that
two random users differ, without seeing anyone's category.
"""
import numpy as np

from pairwise_ldp import Dataset
from pairwise_ldp.statistics import gini_diversity_kernel, pairwise_statistic_exact, run_pairwise_protocol

k, n, eps = 12, 20_000, 1.0
rng = np.random.default_rng(0)

# a skewed population: a few popular categories
probs = np.arange(k, 0, -1) ** 2.0
probs /= probs.sum()
data = Dataset(rng.choice(np.arange(1, k + 1), size=n, p=probs), k)

kernel = gini_diversity_kernel(k)
truth = pairwise_statistic_exact(kernel, data)
print(f"exact Gini diversity   {truth:.4f}")

for protocol in ("noninteractive", "three_round"):
    ests = [run_pairwise_protocol(kernel, data, eps, seed=s, protocol=protocol).value for s in range(20)]
    ests = np.array(ests)
    print(f"{protocol:15s} mean {ests.mean():.4f}  std {ests.std(ddof=1):.4f}  (20 runs, eps={eps})")
