"""
Random forest grid search
==========================

Search a small grid of forest sizes and depths on a held-out split, then
show that a truncated large forest equals a smaller one with the same seed.
"""

import numpy as np

from edrl_mea import GridSpec, fit_forest, grid_search

rng = np.random.default_rng(2)
x = rng.normal(size=(400, 10))
y = ((x[:, 0] + x[:, 1] * x[:, 2]) > 0).astype(int)

best, table = grid_search(x[:300], y[:300], x[300:], y[300:],
                          GridSpec([20, 50, 100], [2, 4, 8, None]), seed=0)
for row in table:
    print(row)
print("best:", best)

# trees are seeded by (seed, tree index), so the first 20 trees of a
# 100-tree forest are exactly a 20-tree forest
big = fit_forest(x, y, 100, 4, seed=0)
small = fit_forest(x, y, 20, 4, seed=0)
print("truncation matches:", big.truncated(20).to_json() == small.to_json())
