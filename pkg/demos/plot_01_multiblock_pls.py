"""
Multiblock PLS on three predictor blocks
=========================================

Fit MBPLS with three blocks of predictors and a shared response, then look
at how much of the response each component explains and how the blocks
share the work.
"""

import numpy as np

from edrl_mea import MbplsConfig, explained_variance, fit_mbpls, predict

rng = np.random.default_rng(0)
n = 120

# three blocks; only the first two carry signal about the response
blocks = [rng.normal(size=(n, 6)), rng.normal(size=(n, 4)), rng.normal(size=(n, 5))]
coef = rng.normal(size=(10, 3))
x = np.hstack(blocks[:2]) @ coef + 0.2 * rng.normal(size=(n, 3))

model = fit_mbpls(blocks, x, MbplsConfig(K=4))
ev = explained_variance(model)
print("response variance explained per component:", np.round(ev["response"], 3))
print("cumulative:", np.round(ev["response_cumulative"], 3))

# block importance: rows are blocks, columns components, columns sum to one
print("block importance:\n", np.round(model.block_importance, 3))

# super scores are mutually orthogonal
T = model.super_scores
print("max |t_a . t_b| / norms:",
      np.max(np.abs(T.T @ T / np.outer(*(2 * [np.linalg.norm(T, axis=0)])) - np.eye(model.K))))

# predictions for new rows use the fitted centring and scaling
new = [rng.normal(size=(5, b.shape[1])) for b in blocks]
print("predictions for 5 new rows:\n", np.round(predict(model, new), 3))
