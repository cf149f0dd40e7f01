"""Kendall's tau between two ordinal answers, and AUC of a private classifier score."""
import numpy as np

from pairwise_ldp.statistics import auc_exact, auc_protocol, kendall_tau_protocol

rng = np.random.default_rng(1)
n, eps = 30_000, 2.0

# two survey questions on 1..5 that tend to move together
y = rng.integers(1, 6, n)
z = np.clip(y + rng.integers(-1, 2, n), 1, 5)

# brute force on a subsample is cheap enough to show the target
sub = slice(0, 2000)
a, b = y[sub], z[sub]
tau_sub = np.mean(np.sign(a[:, None] - a[None, :]) * np.sign(b[:, None] - b[None, :])) * 2000 / 1999
print(f"tau on 2000 users (brute force)  {tau_sub:.3f}")
print(f"tau exact via noise_off          {kendall_tau_protocol(y, z, 5, 5, eps, noise_off=True).value:.3f}")
est = kendall_tau_protocol(y, z, 5, 5, eps, seed=7)
print(f"tau private                      {est.value:.3f}  out_of_range={est.params['out_of_range']}")

# AUC: scores 1..8, positives score higher on average
m = 400_000  # AUC splits the budget, so it needs more users
labels = rng.integers(0, 2, m)
scores = np.clip(rng.integers(1, 7, m) + 2 * labels, 1, 8)
print(f"\nAUC exact    {auc_exact(scores, labels):.3f}")
# a single run is noisy at this size; the raw (unclamped) estimates are unbiased
runs = [auc_protocol(scores, labels, 8, eps, seed=s) for s in range(10)]
raw = np.array([r.params["raw_estimate"] for r in runs])
print(f"AUC private  raw mean {raw.mean():.3f}  std {raw.std(ddof=1):.3f}  (10 runs)")
print(f"             clamped first run {runs[0].value:.3f}")
est = runs[0]
for entry in est.transcript_stats["budget"]:
    print("  ledger", entry)
