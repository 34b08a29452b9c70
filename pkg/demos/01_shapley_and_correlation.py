"""Shapley values, and what happens when two features carry the same signal.

Run with ``python3 demos/01_shapley_and_correlation.py``.
"""
import numpy as np

from realexp import (
    TableGame,
    adjustment_factor,
    dilution_demo,
    exact_shapley,
    interaction_weights,
    permutation_shapley,
    realexp_decoupled,
    realexp_permutation,
)

np.set_printoptions(precision=4, suppress=True)

# %% A three-player weighted majority game.
# Player 0 has weight 2, players 1 and 2 weight 1 each; a coalition wins with weight >= 3.
weights = [2, 1, 1]
game = TableGame.from_function(3, lambda S: float(sum(weights[i] for i in S) >= 3))
print("exact Shapley     ", exact_shapley(game).phi)
print("all 3! orderings  ", permutation_shapley(game).phi)

# %% Duplicating a feature splits its credit.
# A single informative feature is worth delta.  Copy it and each copy gets delta/2.
for delta, eps in [(1.0, 0.0), (1.0, 0.2)]:
    phi = dilution_demo(delta, eps, 2).phi
    print(f"delta={delta}, eps={eps}: copies get {phi}")

# %% The adjustment factor switches off marginal gains that are already explained.
# With s[0, 1] = 1, feature 0 earns nothing in any ordering where feature 1 came first.
s = np.array([[1.0, 1.0, 0.2], [1.0, 1.0, 0.0], [0.2, 0.0, 1.0]])
print("factor for 0 after {1}:", adjustment_factor([1], 0, s))
print("factor for 0 after {2}:", adjustment_factor([2], 0, s))
print("similarity-adjusted permutation values:", realexp_permutation(game, 3, s).phi)

# %% The decoupled score: an independent part plus a similarity-weighted interaction part.
s = np.array([[1.0, 0.6, 0.1], [0.6, 1.0, 0.3], [0.1, 0.3, 1.0]])
w, _ = interaction_weights(s)
print("interaction weights (rows sum to 1):\n", w)
att = realexp_decoupled(game, 3, s)
print("independent:", att.phi_independent)
print("interaction:", att.phi_margin)
print("total:      ", att.phi)
