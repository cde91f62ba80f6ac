"""
Per-class autoencoder blocks with a shared latent layer
========================================================

Build one block per class.  Each block has a private branch and a branch
whose latent layer is the same object in every block.  Train for a few
epochs, check gradients, and embed rows.
"""

import numpy as np

from edrl_mea import EdrlConfig, build_edrl, embed, train_edrl
from edrl_mea.nn import finite_diff_check

rng = np.random.default_rng(1)
N = 12
neg = rng.normal(size=(150, N)) - 0.8
pos = rng.normal(size=(150, N)) + 0.8

cfg = EdrlConfig(max_epochs=30, patience=5, seed=0)
model = build_edrl(N, 2, cfg)

# the inter-branch latent layer is one object shared by both blocks
print("shared latent:", model.blocks[0].inter.latent is model.blocks[1].inter.latent)

# analytic gradients against central differences, before training
print("gradient check (max relative error):",
      finite_diff_check(model.blocks[0], neg[:4], 1e-6))

train_edrl(model, [neg[:120], pos[:120]], [neg[120:], pos[120:]], cfg)
for h in model.training_history[:3] + model.training_history[-2:]:
    print(h["epoch"], "val", round(h["val_total"], 4))
print("best epoch", model.best_epoch, "stopped early", model.stopped_early)

# after training the shared layer is still identical across blocks
w0, w1 = (b.inter.latent.weights for b in model.blocks)
print("latent weights identical:", np.array_equal(w0, w1))

# each block maps a row back into the N-dim input space
emb = embed(model, np.vstack([neg[:3], pos[:3]]))
print([e.shape for e in emb])
