"""Encoder/codebook/decoder assembly and the training procedures."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .codebook import Codebook, ema_update, kmeans_init, perplexity, quantize
from .errors import ConfigError, DivergenceError
from .numcore import Mlp, adamw_step, mlp_backward, mlp_forward, mse
from .synthdata import GaussianMixtureDataset, batches

log = logging.getLogger(__name__)

# token dimension per input dimension for the synthetic experiments
DEFAULT_TOKEN_DIMS = {2: 1, 3: 1, 4: 1, 8: 4}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    gamma: float = 0.9
    beta: float = 0.25
    codebook_size: int = 128
    hidden_dim: int = 32
    seed: int = 0
    pretrain_epochs: int = 0
    encoder_hidden: int | None = None  # None means hidden_dim
    token_dim: int | None = None  # None means DEFAULT_TOKEN_DIMS[input dim]
    tokens_per_sample: int = 1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kmeans_iters: int = 50

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if min(self.epochs, self.pretrain_epochs) < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.codebook_size < 1 or self.hidden_dim < 1 or self.tokens_per_sample < 1:
            raise ConfigError("codebook_size, hidden_dim and tokens_per_sample must be >= 1")

    def resolved_token_dim(self, input_dim: int) -> int:
        if self.token_dim is not None:
            return self.token_dim
        return DEFAULT_TOKEN_DIMS.get(input_dim, 1)


@dataclass
class EpochRecord:
    epoch: int
    recon_loss: float
    commit_loss: float
    perplexity: float
    wall_clock: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    init_perplexity: float | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def same_as(self, other: "TrainTrace") -> bool:
        """Bitwise equality ignoring wall-clock timings (NaN equals NaN)."""
        names = ("epoch", "recon_loss", "commit_loss", "perplexity")
        a = np.array([[getattr(r, f) for f in names] for r in self.records], dtype=float)
        b = np.array([[getattr(r, f) for f in names] for r in other.records], dtype=float)
        return (self.init_perplexity == other.init_perplexity and a.shape == b.shape
                and np.array_equal(a, b, equal_nan=True))


class VqForward(NamedTuple):
    embeddings: np.ndarray  # (n, tokens_per_sample * token_dim)
    quantized: np.ndarray  # same shape, tokens substituted
    reconstruction: np.ndarray
    assignment: np.ndarray  # (n, tokens_per_sample)


class VqVae:
    def __init__(self, encoder: Mlp, decoder: Mlp, codebook: Codebook, beta: float = 0.25,
                 tokens_per_sample: int = 1):
        if beta < 0:
            raise ConfigError("beta must be >= 0")
        latent = codebook.dim * tokens_per_sample
        if encoder.out_dim != latent or decoder.in_dim != latent:
            raise ConfigError(
                f"encoder output {encoder.out_dim} / decoder input {decoder.in_dim} must "
                f"equal token_dim * tokens_per_sample = {latent}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.codebook = codebook
        self.beta = float(beta)
        self.tokens_per_sample = tokens_per_sample

    @property
    def token_dim(self) -> int:
        return self.codebook.dim

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    def copy(self) -> "VqVae":
        return VqVae(self.encoder.copy(), self.decoder.copy(), self.codebook.copy(),
                     self.beta, self.tokens_per_sample)

    def to_tokens(self, z: np.ndarray) -> np.ndarray:
        """Split encoder outputs into ``(n * tokens_per_sample, token_dim)`` chunks."""
        return z.reshape(-1, self.token_dim)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, x)

    def decode_tokens(self, indices: np.ndarray) -> np.ndarray:
        """Decode rows of token indices, shape ``(n, tokens_per_sample)``."""
        idx = np.asarray(indices).reshape(-1, self.tokens_per_sample)
        zq = self.codebook.tokens[idx].reshape(len(idx), -1)
        return mlp_forward(self.decoder, zq)


def build_vqvae(input_dim: int, config: TrainConfig) -> VqVae:
    """Fresh model: three-layer encoder and decoder, uninitialized codebook."""
    rng = np.random.default_rng([config.seed, 0])
    token_dim = config.resolved_token_dim(input_dim)
    latent = token_dim * config.tokens_per_sample
    enc_h = config.encoder_hidden or config.hidden_dim
    dec_h = config.hidden_dim
    encoder = Mlp.build([input_dim, enc_h, enc_h, latent], rng)
    decoder = Mlp.build([latent, dec_h, dec_h, input_dim], rng)
    codebook = Codebook(config.codebook_size, token_dim, config.gamma)
    return VqVae(encoder, decoder, codebook, config.beta, config.tokens_per_sample)


def forward_vq(model: VqVae, batch) -> VqForward:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ConfigError(f"expected (n, {model.input_dim}) batch, got shape {x.shape}")
    z = mlp_forward(model.encoder, x)
    idx, zq = quantize(model.codebook, model.to_tokens(z))
    zq = zq.reshape(z.shape)
    # straight-through: the decoder sees the tokens, gradients flow to z unchanged
    xhat = mlp_forward(model.decoder, zq)
    return VqForward(z, zq, xhat, idx.reshape(len(x), model.tokens_per_sample))


def loss_and_grads(model: VqVae, batch) -> tuple[float, float, VqForward]:
    """Populate encoder/decoder gradients of ``recon + beta * commit``.

    Both losses are element means. The codebook gets no gradient.
    Returns ``(recon_loss, commit_loss, forward)``.
    """
    x = np.asarray(batch, dtype=np.float64)
    fwd = forward_vq(model, x)
    z, zq, xhat = fwd.embeddings, fwd.quantized, fwd.reconstruction
    recon = mse(xhat, x)
    commit = mse(z, zq)
    g_dec_in = mlp_backward(model.decoder, 2.0 * (xhat - x) / x.size)
    g_z = g_dec_in + model.beta * 2.0 * (z - zq) / z.size
    mlp_backward(model.encoder, g_z)
    return recon, commit, fwd


def _adam(net: Mlp, config: TrainConfig) -> None:
    adamw_step(net, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became {value} in epoch {epoch}")


def _samples(data) -> np.ndarray:
    return data.samples if isinstance(data, GaussianMixtureDataset) else np.asarray(data)


def autoencoder_step(encoder: Mlp, decoder: Mlp, batch: np.ndarray, config: TrainConfig) -> float:
    z = mlp_forward(encoder, batch)
    xhat = mlp_forward(decoder, z)
    loss = mse(xhat, batch)
    mlp_backward(encoder, mlp_backward(decoder, 2.0 * (xhat - batch) / batch.size))
    _adam(encoder, config)
    _adam(decoder, config)
    return loss


def vq_step(model: VqVae, batch: np.ndarray, config: TrainConfig) -> tuple[float, float, np.ndarray]:
    recon, commit, fwd = loss_and_grads(model, batch)
    _adam(model.encoder, config)
    _adam(model.decoder, config)
    ema_update(model.codebook, model.to_tokens(fwd.embeddings), fwd.assignment.ravel())
    return recon, commit, fwd.assignment


def train_autoencoder(encoder: Mlp, decoder: Mlp, data, config: TrainConfig,
                      epochs: int | None = None) -> TrainTrace:
    """Train encoder and decoder on reconstruction alone, no quantization.

    Runs ``config.pretrain_epochs`` epochs unless ``epochs`` is given.
    """
    x = _samples(data)
    epochs = config.pretrain_epochs if epochs is None else epochs
    trace = TrainTrace()
    for epoch in range(epochs):
        t0 = time.perf_counter()
        losses, sizes = [], []
        for batch in batches(x, config.batch_size, [config.seed, 1, epoch]):
            losses.append(autoencoder_step(encoder, decoder, batch, config))
            sizes.append(len(batch))
        recon = float(np.average(losses, weights=sizes))
        _check_finite(recon, "autoencoder reconstruction loss", epoch)
        trace.records.append(
            EpochRecord(epoch, recon, 0.0, float("nan"), time.perf_counter() - t0)
        )
    return trace


def init_codebook(model: VqVae, data, config: TrainConfig) -> float:
    """K-means the tokens on the encoder outputs of the whole set; returns the
    perplexity of the resulting assignment."""
    z = model.to_tokens(model.encode(_samples(data)))
    result = kmeans_init(model.codebook, z, max_iters=config.kmeans_iters,
                         seed=[config.seed, 2])
    return perplexity(result.assignment, model.codebook.size)


def train_vqvae(model: VqVae, data, config: TrainConfig, epochs: int | None = None) -> TrainTrace:
    """Minibatch VQ training: AdamW on the networks, EMA on the codebook.

    An uninitialized codebook is K-means initialized on the encoder outputs of the
    full training set before the first epoch.
    """
    x = _samples(data)
    epochs = config.epochs if epochs is None else epochs
    trace = TrainTrace()
    if not model.codebook.initialized:
        trace.init_perplexity = init_codebook(model, x, config)
    S = model.codebook.size
    for epoch in range(epochs):
        t0 = time.perf_counter()
        recons, commits, sizes, used = [], [], [], []
        for batch in batches(x, config.batch_size, [config.seed, 3, epoch]):
            recon, commit, idx = vq_step(model, batch, config)
            recons.append(recon)
            commits.append(commit)
            sizes.append(len(batch))
            used.append(idx.ravel())
        recon = float(np.average(recons, weights=sizes))
        commit = float(np.average(commits, weights=sizes))
        _check_finite(recon, "reconstruction loss", epoch)
        _check_finite(commit, "commitment loss", epoch)
        trace.records.append(EpochRecord(
            epoch, recon, commit, perplexity(np.concatenate(used), S),
            time.perf_counter() - t0,
        ))
    return trace


def pretrain_then_finetune(data, config: TrainConfig) -> tuple[VqVae, TrainTrace, TrainTrace]:
    """Autoencoder pretraining, then K-means init on the pretrained encoder and VQ
    fine-tuning. With ``pretrain_epochs == 0`` this is plain VQ-VAE training.

    Returns ``(model, pretrain_trace, vq_trace)``.
    """
    x = _samples(data)
    model = build_vqvae(x.shape[1], config)
    pre = TrainTrace()
    if config.pretrain_epochs > 0:
        pre = train_autoencoder(model.encoder, model.decoder, x, config)
        log.debug("pretraining done, final recon %.4g", pre.records[-1].recon_loss)
        # fine-tuning starts from the pretrained weights with a fresh optimizer
        model.encoder.reset_optimizer()
        model.decoder.reset_optimizer()
    vq = train_vqvae(model, x, config)
    return model, pre, vq
