"""Look at the factorizations behind the protocols and their norms."""
import numpy as np

from pairwise_ldp.kernels import gini_diversity_fact, jl_reduce, lipschitz_bst_fact, prefix_tree_fact
from pairwise_ldp.workload import fact_balance, factorization_residual

for name, F in [("gini_diversity k=64", gini_diversity_fact(64)),
                ("prefix_tree m=64", fact_balance(prefix_tree_fact(64)))]:
    nL, nR = F.norms()
    print(f"{name:22s} ell={F.ell:4d}  |L|={nL:.3f} |R|={nR:.3f}  product={F.norm_product():.3f}"
          f"  residual={factorization_residual(F, F.product()):.1e}")

# |x - y| on a grid of 31 points, via the binary search tree construction
k = 31
g = (np.arange(1, k + 1) - 0.5) / k
W = np.abs(g[:, None] - g[None, :])
F = lipschitz_bst_fact(W, k, 1 / k)
print(f"\nabsdiff BST k={k}: |R|^2 = {F.norms()[1] ** 2:.3f} (bound 36/11 = {36 / 11:.3f}),"
      f" residual {factorization_residual(F, W):.1e}")

# Gaussian rank restriction trades an additive error alpha for fewer rows
F = gini_diversity_fact(1024)
G = jl_reduce(F, 1.5, np.random.default_rng(0))
print(f"\nJL on gini k=1024: ell {F.ell} -> {G.ell}, residual {factorization_residual(G, F.product()):.3f} <= 1.5")
