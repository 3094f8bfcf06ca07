"""Permutation-invariant variational encoder.

A shared per-point MLP lifts every point to a feature vector, a coordinate-wise
max over points pools them, and a head MLP maps the pooled vector to
``(mu, logvar)``. Max pooling is exact, so the code is bit-identical under any
reordering of the input points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .clouds import ColoredPointCloud, PointCloud
from .nn import FlatWeights, MLPSpec

LOGVAR_CLAMP = 10.0


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray | None = None
    noise: np.ndarray | None = None

    @property
    def dim(self):
        return self.mu.size


@dataclass
class EncoderParams:
    per_point_spec: MLPSpec
    per_point: FlatWeights
    head_spec: MLPSpec
    head: FlatWeights

    def __post_init__(self):
        if self.per_point_spec.d_out != self.head_spec.d_in:
            raise ValueError(
                f"per-point output width {self.per_point_spec.d_out} "
                f"!= head input width {self.head_spec.d_in}"
            )
        if self.head_spec.d_out % 2:
            raise ValueError("head must emit an even number of outputs (mu || logvar)")

    @classmethod
    def create(cls, channels, point_widths, head_widths, latent_dim, rng, dtype=np.float64):
        pp = MLPSpec.build((channels, *point_widths))
        head = MLPSpec.build((point_widths[-1], *head_widths, 2 * latent_dim))
        return cls(pp, nn.init_weights(pp, rng, dtype), head, nn.init_weights(head, rng, dtype))

    @property
    def channels(self):
        return self.per_point_spec.d_in

    @property
    def latent_dim(self):
        return self.head_spec.d_out // 2

    def params(self):
        return {"per_point": self.per_point, "head": self.head}

    def replace(self, params):
        return EncoderParams(self.per_point_spec, params["per_point"], self.head_spec, params["head"])


@dataclass
class EncoderTape:
    point_tape: nn.GradTape
    head_tape: nn.GradTape
    argmax: np.ndarray
    n_points: int
    logvar_raw: np.ndarray


def cloud_features(cloud, channels) -> np.ndarray:
    if isinstance(cloud, ColoredPointCloud):
        return cloud.positions if channels == 3 else cloud.features
    if isinstance(cloud, PointCloud):
        if channels != 3:
            raise ValueError(f"encoder expects {channels} channels but the cloud has no colors")
        return cloud.positions
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != channels:
        raise ValueError(f"encoder expects (N, {channels}) input, got shape {x.shape}")
    return x


def encode_with_tape(cloud, params: EncoderParams) -> tuple[LatentCode, EncoderTape]:
    x = cloud_features(cloud, params.channels)
    if len(x) == 0:
        raise ValueError("cannot encode an empty cloud")
    feats, point_tape = nn.forward_with_tape(params.per_point_spec, params.per_point, x)
    argmax = np.argmax(feats, axis=0)
    pooled = feats[argmax, np.arange(feats.shape[1])]
    out, head_tape = nn.forward_with_tape(params.head_spec, params.head, pooled[None, :])
    d = params.latent_dim
    mu = out[0, :d].copy()
    raw = out[0, d:].copy()
    logvar = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return LatentCode(mu, logvar), EncoderTape(point_tape, head_tape, argmax, len(x), raw)


def encode(cloud, params: EncoderParams) -> LatentCode:
    """``(mu, logvar)`` for a cloud; ``z`` is left unset."""
    return encode_with_tape(cloud, params)[0]


def encoder_backward(tape: EncoderTape, params: EncoderParams, d_mu, d_logvar):
    """Parameter gradients given loss gradients wrt ``mu`` and ``logvar``."""
    inside = np.abs(tape.logvar_raw) <= LOGVAR_CLAMP
    up = np.concatenate([d_mu, d_logvar * inside])[None, :]
    g_head, d_pooled = nn.backward(tape.head_tape, up)
    d_feats = np.zeros((tape.n_points, d_pooled.shape[1]), dtype=d_pooled.dtype)
    d_feats[tape.argmax, np.arange(d_pooled.shape[1])] = d_pooled[0]
    g_point, _ = nn.backward(tape.point_tape, d_feats)
    return {"per_point": g_point, "head": g_head}


def sample_latent(code: LatentCode, rng) -> np.ndarray:
    """Reparameterized draw ``z = mu + exp(logvar / 2) * eps``; stored on ``code``."""
    eps = rng.standard_normal(code.mu.shape)
    code.noise = eps
    code.z = code.mu + np.exp(0.5 * code.logvar) * eps
    return code.z


def use_mean(code: LatentCode) -> np.ndarray:
    code.noise = np.zeros_like(code.mu)
    code.z = code.mu.copy()
    return code.z


def reparam_backward(code: LatentCode, d_z):
    """Map a gradient wrt ``z`` to gradients wrt ``(mu, logvar)``."""
    d_mu = np.array(d_z)
    d_logvar = d_z * code.noise * 0.5 * np.exp(0.5 * code.logvar)
    return d_mu, d_logvar


def kl_divergence(code: LatentCode) -> float:
    mu, lv = code.mu, code.logvar
    return float(0.5 * np.sum(np.exp(lv) + mu * mu - 1.0 - lv))


def kl_grad(code: LatentCode):
    return code.mu.copy(), 0.5 * (np.exp(code.logvar) - 1.0)
