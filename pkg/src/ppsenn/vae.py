"""Encoder/decoder backbones with an optional variational bottleneck.

Two architectures are available: a fully-connected stack for flat inputs
(default) and a strided 4x4-kernel convolutional stack with batch
normalization for 32x32 grayscale images. In variational mode the encoder
produces a mean and a log-variance head; in plain-autoencoder mode the
log-variance head is absent, reparameterize degenerates to the mean, and
the KL term is identically zero.

The embedding consumed downstream (distances, density terms) is always the
encoder mean; sampling only feeds the decoder during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

LEAKY_SLOPE = 0.01
LOG_VAR_RANGE = (-10.0, 10.0)
BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass
class BackboneConfig:
    kind: str = "mlp"
    hidden_sizes: tuple = (256, 128)
    latent_dim: int = 2
    variational: bool = True

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"BackboneConfig: unknown kind {self.kind!r}")
        if self.latent_dim < 2:
            raise ValueError("BackboneConfig: latent_dim must be >= 2")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


@dataclass
class EncoderOutput:
    mu: Tensor
    log_var: Tensor | None = None


class Dense:
    def __init__(self, rng, n_in: int, n_out: int, scale: float | None = None):
        std = np.sqrt(2.0 / n_in) if scale is None else scale
        self.w = Tensor(rng.standard_normal((n_in, n_out)) * std, requires_grad=True)
        self.b = Tensor(np.zeros((1, n_out)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.affine(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class Conv:
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int, pad: int,
                 transposed: bool = False):
        fan_in = c_in * k * k
        shape = (c_in, c_out, k, k) if transposed else (c_out, c_in, k, k)
        self.w = Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride, self.pad, self.transposed = stride, pad, transposed

    def __call__(self, x: Tensor) -> Tensor:
        op = T.conv2d_transpose if self.transposed else T.conv2d
        return op(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def parameters(self):
        return [self.w, self.b]


class BatchNorm:
    """Inference-form normalization; running statistics follow the batch by EMA."""

    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x: Tensor, update: bool = False) -> Tensor:
        if update:
            batch_mean = x.values.mean(axis=(0, 2, 3))
            batch_var = x.values.var(axis=(0, 2, 3))
            self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * batch_mean
            self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * batch_var
        return T.batchnorm_inference(x, self.gamma, self.beta,
                                     self.running_mean, self.running_var, BN_EPS)

    def parameters(self):
        return [self.gamma, self.beta]

    def state_arrays(self, prefix: str):
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]


class AutoEncoder:
    """Backbone pair e(.) / g(.) plus the variational bottleneck machinery."""

    def __init__(self, config: BackboneConfig, input_dim: int, rng):
        self.config = config
        self.input_dim = input_dim
        self.train_mode = False
        if config.kind == "mlp":
            self._build_mlp(rng)
        else:
            self._build_conv(rng)

    # -- construction -------------------------------------------------------

    def _build_mlp(self, rng):
        cfg = self.config
        head_width = 2 * cfg.latent_dim if cfg.variational else cfg.latent_dim
        sizes = (self.input_dim,) + cfg.hidden_sizes
        self.enc_layers = [Dense(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        self.enc_head = Dense(rng, sizes[-1], head_width, scale=np.sqrt(1.0 / sizes[-1]))
        dec_sizes = (cfg.latent_dim,) + tuple(reversed(cfg.hidden_sizes))
        self.dec_layers = [Dense(rng, a, b) for a, b in zip(dec_sizes[:-1], dec_sizes[1:])]
        self.dec_head = Dense(rng, dec_sizes[-1], self.input_dim,
                              scale=np.sqrt(1.0 / dec_sizes[-1]))
        self.bn_layers = []

    def _build_conv(self, rng):
        cfg = self.config
        self.side = int(round(np.sqrt(self.input_dim)))
        if self.side * self.side != self.input_dim or self.side % 16 != 0:
            raise ValueError("conv backbone expects square images with side divisible by 16")
        chans = self._conv_channels = (32, 64, 128, 256)
        head_width = 2 * cfg.latent_dim if cfg.variational else cfg.latent_dim
        self.enc_convs, self.enc_bns = [], []
        c_prev = 1
        for c in chans:
            self.enc_convs.append(Conv(rng, c_prev, c, 4, 2, 1))
            self.enc_bns.append(BatchNorm(c))
            c_prev = c
        self.enc_head = Conv(rng, c_prev, head_width, 1, 1, 0)
        self.base_side = self.side // 16
        self.dec_fc = Dense(rng, cfg.latent_dim, chans[-1] * self.base_side ** 2)
        self.dec_convs, self.dec_bns = [], []
        rev = list(reversed(chans))
        for c_in, c_out in zip(rev[:-1], rev[1:]):
            self.dec_convs.append(Conv(rng, c_in, c_out, 4, 2, 1, transposed=True))
            self.dec_bns.append(BatchNorm(c_out))
        self.dec_head = Conv(rng, rev[-1], 1, 4, 2, 1, transposed=True)
        self.bn_layers = self.enc_bns + self.dec_bns

    # -- forward ------------------------------------------------------------

    def encode(self, x: Tensor) -> EncoderOutput:
        if x.values.ndim != 2 or x.values.shape[1] != self.input_dim:
            raise T.ShapeError(f"encode: expected (n, {self.input_dim}), got {x.values.shape}")
        cfg = self.config
        if cfg.kind == "mlp":
            h = x
            for layer in self.enc_layers:
                h = T.leaky_relu(layer(h), LEAKY_SLOPE)
            head = self.enc_head(h)
        else:
            h = T.reshape(x, (x.values.shape[0], 1, self.side, self.side))
            for conv, bn in zip(self.enc_convs, self.enc_bns):
                h = T.leaky_relu(bn(conv(h), update=self.train_mode), LEAKY_SLOPE)
            head = T.spatial_mean(self.enc_head(h))
        if not cfg.variational:
            return EncoderOutput(mu=head, log_var=None)
        l = cfg.latent_dim
        mu = head[:, :l]
        log_var = T.clip(head[:, l:], *LOG_VAR_RANGE)
        return EncoderOutput(mu=mu, log_var=log_var)

    def reparameterize(self, out: EncoderOutput, noise: np.ndarray) -> Tensor:
        """z = mu + exp(log_var / 2) * noise; collapses to mu without a variance head."""
        if out.log_var is None:
            return out.mu
        return out.mu + T.exp(out.log_var * 0.5) * Tensor(noise)

    def decode(self, z: Tensor) -> Tensor:
        cfg = self.config
        if z.values.ndim != 2 or z.values.shape[1] != cfg.latent_dim:
            raise T.ShapeError(f"decode: expected (n, {cfg.latent_dim}), got {z.values.shape}")
        if cfg.kind == "mlp":
            h = z
            for layer in self.dec_layers:
                h = T.leaky_relu(layer(h), LEAKY_SLOPE)
            return T.tanh(self.dec_head(h))
        n = z.values.shape[0]
        h = T.reshape(self.dec_fc(z), (n, self._conv_channels[-1], self.base_side, self.base_side))
        h = T.leaky_relu(h, LEAKY_SLOPE)
        for conv, bn in zip(self.dec_convs, self.dec_bns):
            h = T.leaky_relu(bn(conv(h), update=self.train_mode), LEAKY_SLOPE)
        out = T.tanh(self.dec_head(h))
        return T.reshape(out, (n, self.input_dim))

    def kl_term(self, out: EncoderOutput) -> Tensor:
        """Closed-form KL against a standard normal, summed over the batch."""
        if out.log_var is None:
            return Tensor(0.0)
        inner = 1.0 + out.log_var - T.square(out.mu) - T.exp(out.log_var)
        return T.sum_(inner) * -0.5

    # -- numpy-facing helpers -----------------------------------------------

    def encode_np(self, x: np.ndarray) -> np.ndarray:
        """Deterministic embedding (the encoder mean) for raw arrays."""
        return self.encode(Tensor(np.atleast_2d(x))).mu.values

    def decode_np(self, z: np.ndarray) -> np.ndarray:
        return self.decode(Tensor(np.atleast_2d(z))).values

    # -- state --------------------------------------------------------------

    def parameters(self):
        params = []
        if self.config.kind == "mlp":
            for layer in self.enc_layers + [self.enc_head] + self.dec_layers + [self.dec_head]:
                params.extend(layer.parameters())
        else:
            for conv, bn in zip(self.enc_convs, self.enc_bns):
                params.extend(conv.parameters())
                params.extend(bn.parameters())
            params.extend(self.enc_head.parameters())
            params.extend(self.dec_fc.parameters())
            for conv, bn in zip(self.dec_convs, self.dec_bns):
                params.extend(conv.parameters())
                params.extend(bn.parameters())
            params.extend(self.dec_head.parameters())
        return params

    def state_arrays(self):
        out = []
        for i, bn in enumerate(self.bn_layers):
            out.extend(bn.state_arrays(f"bn{i}"))
        return out
