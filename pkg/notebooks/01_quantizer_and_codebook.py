# %% [markdown]
# # Quantizer, K-means initialization and EMA updates
#
# A codebook is a set of tokens. Quantization replaces each embedding by its
# nearest token, K-means picks the initial tokens, and the EMA update keeps
# each token at the running mean of the embeddings it serves.

# %%
import numpy as np

from vqc.codebook import Codebook, ema_update, kmeans_init, perplexity, quantize

rng = np.random.default_rng(0)
blobs = np.vstack([rng.normal(loc=c, scale=0.3, size=(200, 2)) for c in [(-3, 0), (0, 3), (3, 0)]])

# %%
cb = Codebook(size=6, dim=2, gamma=0.9)
result = kmeans_init(cb, blobs, seed=0)
print("objective per iteration:", np.round(result.objective_history, 3))
print("tokens:\n", np.round(cb.tokens, 2))

# %% [markdown]
# Usage is summarised by perplexity: 1 when one token takes everything, the
# codebook size when usage is uniform.

# %%
idx, zq = quantize(cb, blobs)
print("perplexity:", perplexity(idx, cb.size))

# %% [markdown]
# Shift the data and let the EMA update track it.

# %%
shifted = blobs + [0.5, 0.0]
for step in range(30):
    idx, _ = quantize(cb, shifted)
    ema_update(cb, shifted, idx)
print("tokens after tracking the shift:\n", np.round(cb.tokens, 2))
