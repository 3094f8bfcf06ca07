"""Stage 1: a hypernetwork that turns a point cloud into a shape network.

The shape (target) network maps points drawn from the unit ball onto the
object's surface. Training minimizes Chamfer distance plus a weighted KL term
on the latent code.

With ``baseline_mode`` the target network instead emits six channels (position
and color) and is trained with Chamfer distance in R^6 against the colored
cloud. This is the single-stage reference model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import hyper, nn
from .clouds import ColoredPointCloud, PointCloud
from .colorspace import quiet_convert
from .encoder import kl_divergence, kl_grad
from .hyper import HyperModel, TrainingDiverged
from .io import subsample
from .metrics import chamfer_with_grad
from .nn import FlatWeights, MLPSpec

log = logging.getLogger(__name__)

TRAIN_COLOR_SPACE = "lab_unit"


class ShapeModel(HyperModel):
    """Encoder (3 channels, or 6 in baseline mode) plus the shape weight head."""

    @property
    def baseline(self):
        return self.target_spec.d_out == 6


def create_shape_model(config, rng) -> ShapeModel:
    widths = list(config.target_widths)
    if config.baseline_mode:
        widths[-1] = 6
        channels = 6
    else:
        channels = 3
    target = MLPSpec.build(widths)
    return ShapeModel.create(channels, target, config, rng)


@dataclass
class PriorSample:
    points: np.ndarray
    kind: str

    def __len__(self):
        return len(self.points)


def sample_prior(n, kind="ball", rng=None) -> PriorSample:
    """Uniform samples in the unit ball or on the unit sphere."""
    if n < 1:
        raise ValueError(f"prior sample size must be >= 1, got {n}")
    if kind not in ("ball", "sphere"):
        raise ValueError(f"prior kind must be 'ball' or 'sphere', got {kind!r}")
    rng = rng if rng is not None else np.random.default_rng()
    g = rng.standard_normal((n, 3))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; guard anyway
    norms[norms == 0] = 1.0
    dirs = g / norms
    if kind == "sphere":
        return PriorSample(dirs, kind)
    radii = rng.random((n, 1)) ** (1.0 / 3.0)
    return PriorSample(dirs * radii, kind)


def training_target(cloud, baseline):
    """The array a stage-1 model is compared against: positions, or positions+LAB in baseline mode."""
    if not baseline:
        if isinstance(cloud, (PointCloud, ColoredPointCloud)):
            return cloud.positions
        return np.asarray(cloud, dtype=np.float64)
    if not isinstance(cloud, ColoredPointCloud):
        raise ValueError("baseline mode needs a colored cloud")
    return np.concatenate([cloud.positions, quiet_convert(cloud.colors, cloud.space, TRAIN_COLOR_SPACE)], axis=1)


def predict_weights(model: ShapeModel, cloud, rng=None, use_mean=False):
    """``(theta, code)`` for a cloud. Samples the latent unless ``rng`` is None or ``use_mean``."""
    trace = hyper.predict(model, training_target(cloud, model.baseline), rng, sample=not use_mean)
    return trace.weights, trace.code


def decode_points(theta: FlatWeights, points, spec: MLPSpec | None = None) -> np.ndarray:
    spec = spec or theta.spec
    if spec is None:
        raise ValueError("theta is not bound to a spec; pass spec explicitly")
    pts = points.points if isinstance(points, PriorSample) else points
    return nn.forward(spec, theta, pts)


def reconstruct(theta: FlatWeights, prior, spec: MLPSpec | None = None):
    """Push prior points through the shape network. Row ``i`` of the result comes from row ``i`` of ``prior``.

    A six-channel (baseline) network yields a :class:`ColoredPointCloud` in
    ``lab_unit`` with colors clipped to [0, 1].
    """
    out = decode_points(theta, prior, spec).astype(np.float64)
    if out.shape[1] == 6:
        return ColoredPointCloud(out[:, :3], np.clip(out[:, 3:], 0.0, 1.0), TRAIN_COLOR_SPACE)
    return PointCloud(out)


@dataclass
class StageLoss:
    total: float
    terms: dict
    grads: dict = field(repr=False)
    theta: FlatWeights = field(repr=False, default=None)


def stage1_loss(model: ShapeModel, cloud, prior, lam=0.0, rng=None) -> StageLoss:
    """Chamfer(reconstruction, cloud) + lam * KL, with gradients for every parameter.

    ``rng`` draws the latent noise; ``None`` uses the latent mean.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    target = training_target(cloud, model.baseline)
    trace = hyper.predict(model, target, rng)
    pts = prior.points if isinstance(prior, PriorSample) else prior
    out, tape = nn.forward_with_tape(model.target_spec, trace.weights, pts)
    cd, d_out = chamfer_with_grad(out, target)
    kl = kl_divergence(trace.code)
    d_theta, _ = nn.backward(tape, d_out)
    d_mu, d_lv = kl_grad(trace.code)
    grads = hyper.backward(model, trace, d_theta, lam * d_mu, lam * d_lv)
    return StageLoss(cd + lam * kl, {"chamfer": cd, "kl": kl}, grads, trace.weights)


def _epoch_order(n, rng):
    while True:
        yield from rng.permutation(n)


def train_stage1(dataset, config, model=None, on_record=None, on_checkpoint=None):
    """Fit the shape hypernetwork, one object per Adam step.

    ``dataset`` is a sequence of objects with ``object_id`` and ``cloud``
    attributes. ``on_record(dict)`` receives each log record;
    ``on_checkpoint(model, step)`` fires every ``config.checkpoint_every``
    steps. Returns ``(model, records)``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    root = np.random.default_rng(config.seed)
    init_rng, order_rng, step_rng = root.spawn(3)
    if model is None:
        model = create_shape_model(config, init_rng)
    opt = hyper.Adam.from_config(config)
    order = _epoch_order(len(dataset), order_rng)
    sub_rng = np.random.default_rng([config.seed, 1])
    records = []
    for step in range(config.steps):
        obj = dataset[next(order)]
        cloud = subsample(obj.cloud, config.recon_points, sub_rng)
        prior = sample_prior(config.recon_points, config.prior, step_rng)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                res = stage1_loss(model, cloud, prior, config.lam, step_rng)
            except ValueError as exc:
                if "non-finite" not in str(exc):
                    raise
                # weights predicted by an overflowing head are rejected by the forward pass
                raise TrainingDiverged(f"step {step}, object {obj.object_id!r}: {exc}") from None
        if not np.isfinite(res.total):
            raise TrainingDiverged(f"non-finite stage-1 loss at step {step} on object {obj.object_id!r}")
        try:
            params = opt.step(model.params(), res.grads)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}, object {obj.object_id!r}: {exc}") from None
        model = model.replace(params)
        rec = {"step": step, "object_id": obj.object_id, "chamfer": res.terms["chamfer"],
               "kl": res.terms["kl"], "total": res.total}
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % 100 == 0:
            log.debug("stage1 step %d object %s chamfer %.6g kl %.4g", step, obj.object_id,
                      res.terms["chamfer"], res.terms["kl"])
        if on_checkpoint is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            on_checkpoint(model, step + 1)
    return model, records
