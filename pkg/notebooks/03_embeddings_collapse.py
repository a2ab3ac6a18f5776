# %% [markdown]
# # Embeddings collapse from a narrow encoder
#
# Same decoder, encoder hidden width 4 vs 32, on the 3-D mixture. The
# narrow encoder merges clusters in embedding space, so reconstruction error
# rises and some reconstructions fall between the modes.
#
# Epoch counts are shortened; `configs/capacity_sweep.conf` runs the full sweep.

# %%
from vqc.diagnostics import evaluate
from vqc.synthdata import MixtureSpec, generate, train_test_split
from vqc.vqvae import TrainConfig, pretrain_then_finetune

ds = generate(MixtureSpec(dim=3))
train, test = train_test_split(ds, 0.1, seed=0)

# %%
for hidden in (4, 32):
    model, _, _ = pretrain_then_finetune(train, TrainConfig(epochs=50, encoder_hidden=hidden))
    r = evaluate(model, test)
    print(f"encoder hidden {hidden:2d}: test MSE {r.test_mse:.4f}  "
          f"mode coverage {r.mode_coverage:.1f}  OOD fraction {r.ood_fraction:.3f}")
