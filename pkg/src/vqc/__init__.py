"""Vector-quantization collapse experiments on synthetic Gaussian mixtures."""
from .codebook import (Codebook, ema_update, kmeans, kmeans_init, perplexity, quantize,
                       usage_histogram)
from .diagnostics import (CollapseReport, evaluate, mode_coverage, ood_fraction,
                          token_allocation)
from .errors import ArtifactError, ConfigError, DivergenceError, UsageError
from .numcore import LinearLayer, Mlp, adamw_step, mlp_backward, mlp_forward, mse
from .synthdata import (GaussianMixtureDataset, MixtureSpec, batches, generate,
                        train_test_split, unscale)
from .vqvae import (TrainConfig, TrainTrace, VqVae, build_vqvae, forward_vq, loss_and_grads,
                    pretrain_then_finetune, train_autoencoder, train_vqvae)

__version__ = "0.1.0"
