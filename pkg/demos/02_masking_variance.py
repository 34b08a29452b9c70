"""How the masking policy changes the variance of a linear score.

For ``f(mu) = c . mu`` we draw masks under the three policies and compare the
sample variance with closed-form predictions.
"""
import numpy as np

from realexp.perturbation import empirical_variance, generate_masks, mc_variance_total

rng = np.random.default_rng(1)
c = rng.uniform(0.5, 1.5, 20)

# %% What the masks look like.
for policy in ("FixedCount", "Bernoulli", "MonteCarloRate"):
    masks = generate_masks(20, 5, 0.3, policy, seed=0)
    hidden = (~masks).sum(axis=1)
    print(f"{policy:>15}: hidden blocks per mask {hidden.tolist()}")

# %% Empirical against analytic variance.
rep = empirical_variance(c, 0.0, 20, 0.3, sigma_q2=0.05, samples=100_000, seed=1)
print(f"\n{'policy':>15} {'empirical':>10} {'analytic':>10}")
print(f"{'FixedCount':>15} {rep.empirical_fixed:10.4f} {rep.analytic_fixed:10.4f}")
print(f"{'Bernoulli':>15} {rep.empirical_random:10.4f} {rep.analytic_random:10.4f}")
print(f"{'MonteCarloRate':>15} {rep.empirical_mc:10.4f} {rep.analytic_mc:10.4f}")

# The first two agree.  The third does not: a random masking rate shared by every
# block of a mask makes the blocks co-vary, which adds Var(q) (sum c)^2.
print(f"\nwith the shared-rate term: {mc_variance_total(c, 0.3, 0.05):.4f}")
