# coding: utf-8

# # Synergy and redundancy between feature pairs
#
# Interaction information compares how much two features tell us about each
# other once the target is known with how much they share on their own.
# Positive values mean the pair is worth more together than apart.

# In[1]:

import math

import numpy as np

from synergyfe.infotheory import (
    EstimatorConfig,
    VariableView,
    interaction_information,
    knn_mi,
    pairwise_ii,
)

rng = np.random.default_rng(0)


def num(x):
    return VariableView(np.asarray(x, dtype=float), "numeric")


def cat(x):
    return VariableView([str(v) for v in x], "categorical")


# ## Mutual information of a correlated Gaussian pair
#
# For rho = 0.9 the exact value is -0.5 * log(1 - rho^2).

# In[2]:

z = rng.multivariate_normal([0, 0], [[1, 0.9], [0.9, 1]], size=3000)
print("knn estimate", round(knn_mi(num(z[:, 0]), num(z[:, 1])), 4))
print("closed form ", round(-0.5 * math.log(1 - 0.81), 4))


# ## XOR: two useless coins that together decide the target

# In[3]:

a, b = rng.integers(0, 2, 3000), rng.integers(0, 2, 3000)
print("xor      ", round(interaction_information(cat(a), cat(b), cat(a ^ b)), 4),
      "(log 2 =", round(math.log(2), 4), ")")

# Copies of the target are redundant with each other, so the value is negative.

s = rng.integers(0, 4, 3000)
print("redundant", round(interaction_information(cat(s), cat(s), cat(s)), 4))


# ## Ranking pairs against a planted product
#
# Six standard-normal columns; the target multiplies columns 1 and 4.

# In[4]:

X = rng.standard_normal((2000, 6))
y = num(X[:, 1] * X[:, 4] + 0.05 * rng.standard_normal(2000))
features = {f"F{i}": num(X[:, i]) for i in range(6)}
pairs = [(f"F{i}", f"F{j}") for i in range(6) for j in range(i + 1, 6)]
ranked = pairwise_ii(pairs, features, y, EstimatorConfig())
for e in ranked[:5]:
    print(f"{e.i}-{e.j}  tau = {e.tau:+.3f}")
