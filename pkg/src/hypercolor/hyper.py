"""Hypernetwork core shared by both stages.

An encoder maps a cloud to a latent code; a weight head MLP maps the latent
vector to the flat weight vector of a small target network. Only the encoder
and the weight head hold trainable parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint, nn
from .encoder import (
    EncoderParams,
    LatentCode,
    encode_with_tape,
    encoder_backward,
    reparam_backward,
    sample_latent,
    use_mean,
)
from .nn import FlatWeights, MLPSpec


@dataclass
class HyperModel:
    encoder: EncoderParams
    head_spec: MLPSpec
    head: FlatWeights
    target_spec: MLPSpec

    def __post_init__(self):
        if self.head_spec.d_out != self.target_spec.param_count:
            raise ValueError(
                f"weight head emits {self.head_spec.d_out} values but the target network "
                f"needs {self.target_spec.param_count}"
            )
        if self.head_spec.d_in != self.encoder.latent_dim:
            raise ValueError("weight head input width must equal the latent dimension")

    @classmethod
    def create(cls, channels, target_spec, config, rng):
        """Fresh model. The weight head's output bias holds an ordinary target init
        and its final weights are scaled down, so untrained models already
        emit well-conditioned target networks."""
        dtype = config.dtype
        enc = EncoderParams.create(channels, config.encoder_point_widths, config.encoder_head_widths,
                                   config.latent_dim, rng, dtype)
        head_spec = MLPSpec.build((config.latent_dim, *config.hyper_widths, target_spec.param_count))
        head = nn.init_weights(head_spec, rng, dtype)
        ws, _, bs = list(head_spec.layer_slices())[-1]
        head.values[ws] *= config.hyper_init_scale
        head.values[bs] = nn.init_weights(target_spec, rng, dtype).values
        return cls(enc, head_spec, head, target_spec)

    @property
    def latent_dim(self):
        return self.encoder.latent_dim

    def params(self):
        return {
            "encoder.per_point": self.encoder.per_point,
            "encoder.head": self.encoder.head,
            "hyper": self.head,
        }

    def replace(self, params):
        enc = self.encoder.replace({"per_point": params["encoder.per_point"], "head": params["encoder.head"]})
        return type(self)(enc, self.head_spec, params["hyper"], self.target_spec)

    def tensors(self):
        return {
            "encoder.per_point": (self.encoder.per_point_spec, self.encoder.per_point.values),
            "encoder.head": (self.encoder.head_spec, self.encoder.head.values),
            "hyper": (self.head_spec, self.head.values),
            "target_spec": (self.target_spec, np.zeros(0)),
        }

    @classmethod
    def from_tensors(cls, tensors, dtype=np.float64):
        pp_spec, pp = checkpoint.restore_weights(tensors["encoder.per_point"], dtype)
        eh_spec, eh = checkpoint.restore_weights(tensors["encoder.head"], dtype)
        h_spec, h = checkpoint.restore_weights(tensors["hyper"], dtype)
        target_spec = tensors["target_spec"][0]
        return cls(EncoderParams(pp_spec, pp, eh_spec, eh), h_spec, h, target_spec)


@dataclass
class HyperTrace:
    code: LatentCode
    encoder_tape: object
    head_tape: nn.GradTape
    weights: FlatWeights


def decode_latent(model: HyperModel, z) -> FlatWeights:
    """Target-network weights for an explicit latent vector."""
    out = nn.forward(model.head_spec, model.head, np.asarray(z)[None, :])
    return FlatWeights.bind(model.target_spec, out[0])


def predict(model: HyperModel, cloud, rng=None, sample=True) -> HyperTrace:
    """Encode, draw or take the mean latent, and emit target weights.

    With ``rng=None`` (or ``sample=False``) the latent mean is used.
    """
    code, enc_tape = encode_with_tape(cloud, model.encoder)
    if rng is not None and sample:
        z = sample_latent(code, rng)
    else:
        z = use_mean(code)
    out, head_tape = nn.forward_with_tape(model.head_spec, model.head, z[None, :])
    return HyperTrace(code, enc_tape, head_tape, FlatWeights.bind(model.target_spec, out[0]))


def backward(model: HyperModel, trace: HyperTrace, d_weights, d_mu_extra=None, d_logvar_extra=None):
    """Gradients of all trainable parameters given ``dL/d(target weights)``.

    ``d_mu_extra`` / ``d_logvar_extra`` add direct latent terms such as the KL.
    """
    d_weights = np.asarray(getattr(d_weights, "values", d_weights))
    g_head, d_z = nn.backward(trace.head_tape, d_weights[None, :])
    d_mu, d_logvar = reparam_backward(trace.code, d_z[0])
    if d_mu_extra is not None:
        d_mu = d_mu + d_mu_extra
    if d_logvar_extra is not None:
        d_logvar = d_logvar + d_logvar_extra
    g_enc = encoder_backward(trace.encoder_tape, model.encoder, d_mu, d_logvar)
    return {"encoder.per_point": g_enc["per_point"], "encoder.head": g_enc["head"], "hyper": g_head}


class Adam:
    """Adam over a dict of named parameter vectors."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {}

    @classmethod
    def from_config(cls, config):
        return cls(config.lr, config.beta1, config.beta2, config.adam_eps)

    def step(self, params, grads):
        new = {}
        for name, p in params.items():
            try:
                new[name], self.state[name] = nn.adam_step(
                    p, grads[name], self.state.get(name), self.lr, self.beta1, self.beta2, self.eps)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{name}: {exc}") from None
            if not np.all(np.isfinite(new[name].values)):
                raise FloatingPointError(f"{name}: update produced non-finite weights")
        return new


class TrainingDiverged(RuntimeError):
    pass


def grad_check_model(model: HyperModel, loss_fn, eps=1e-5) -> float:
    """Worst relative error between ``loss_fn(model).grads`` and central differences.

    ``loss_fn`` must be deterministic (fresh, identically seeded rngs per call)
    and return an object with ``total`` and ``grads``. Parameters are perturbed
    in place and restored.
    """
    analytic = loss_fn(model).grads
    worst = 0.0
    for name, p in model.params().items():
        num = nn.numeric_gradient(lambda: float(loss_fn(model).total), p.values, eps)
        worst = max(worst, nn.max_relative_error(analytic[name].values, num))
    return worst
