"""Comparing a model's ranking with an expert's, and with itself across runs."""
from realexp.evaluation import consistency_report, h_score, jaccard_stability, kendall_tau, r_squared

# %% Agreement with an expert list.
expert = [1, 3, 5, 7, 9]
model = [3, 1, 7, 5, 2]
count, accuracy = h_score(expert, model)
print(f"shared items {count}, accuracy {accuracy}")
print(f"Kendall tau on the shared items: {kendall_tau(expert, model):.4f}")
print(consistency_report([4, 10], [4, 10]))

# %% Stability: mean pairwise Jaccard of top-k sets from repeated runs.
runs = [[0, 1, 2], [0, 1, 3], [0, 2, 1]]
print(f"\nJaccard stability: {jaccard_stability(runs):.4f}")

# %% Surrogate fidelity.
print(f"R2 = {r_squared([1.0, 2.0, 3.0, 4.0], [1.1, 1.9, 3.2, 3.9]):.4f}")
print("constant target:", r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0], return_flag=True))
