"""Stage 2: a hypernetwork that colors the frozen stage-1 reconstruction.

The color target network maps the *same* prior point that the shape network
moved onto the surface to a color, so row ``i`` of the colors belongs to row
``i`` of the reconstruction. Training targets come from aligning every
reconstructed point with its nearest original point(s). Training runs in CIELAB
rescaled to [0, 1]; the 0-255 RGB error is logged alongside.
"""
from __future__ import annotations

import logging

import numpy as np

from . import hyper, nn
from .clouds import ColoredPointCloud
from .colorspace import quiet_convert
from .encoder import kl_divergence, kl_grad
from .hyper import HyperModel, TrainingDiverged
from .io import subsample
from .metrics import color_mse, knn_align
from .nn import FlatWeights, MLPSpec
from .shape_stage import StageLoss, predict_weights, reconstruct, sample_prior

log = logging.getLogger(__name__)

TRAIN_SPACE = "lab_unit"


class ColorModel(HyperModel):
    """Six-channel encoder plus the color weight head; outputs pass through a sigmoid."""


def create_color_model(config, rng) -> ColorModel:
    spec = MLPSpec.build(config.color_widths, output="sigmoid")
    return ColorModel.create(6, spec, config, rng)


def training_cloud(cloud: ColoredPointCloud) -> ColoredPointCloud:
    """Same points with colors converted to the training space."""
    if not isinstance(cloud, ColoredPointCloud):
        raise ValueError("the color stage needs a colored cloud")
    if cloud.space == TRAIN_SPACE:
        return cloud
    return ColoredPointCloud(cloud.positions, quiet_convert(cloud.colors, cloud.space, TRAIN_SPACE), TRAIN_SPACE)


def predict_color_weights(model: ColorModel, cloud: ColoredPointCloud, rng=None, use_mean=False):
    trace = hyper.predict(model, training_cloud(cloud), rng, sample=not use_mean)
    return trace.weights, trace.code


def colorize(eta: FlatWeights, prior, spec: MLPSpec | None = None) -> np.ndarray:
    """Colors (training space, each channel in [0, 1]) for every prior point."""
    spec = spec or eta.spec
    pts = prior.points if hasattr(prior, "points") else prior
    return nn.forward(spec, eta, pts).astype(np.float64)


def stage2_loss(model: ColorModel, frozen_theta: FlatWeights, cloud: ColoredPointCloud, prior, k=1,
                rng=None, lam2=0.0, shape_spec: MLPSpec | None = None) -> StageLoss:
    """MSE between predicted colors and k-NN aligned ground truth on the frozen reconstruction.

    Gradients reach only the color model; ``frozen_theta`` is read, never
    differentiated.
    """
    cloud = training_cloud(cloud)
    recon = reconstruct(frozen_theta, prior, shape_spec)
    targets = knn_align(recon, cloud, k)
    trace = hyper.predict(model, cloud, rng)
    pts = prior.points if hasattr(prior, "points") else prior
    colors, tape = nn.forward_with_tape(model.target_spec, trace.weights, pts)
    mse = color_mse(colors, targets)
    d_colors = 2.0 * (colors - targets) / colors.size
    d_eta, _ = nn.backward(tape, d_colors)
    extra_mu = extra_lv = None
    kl = kl_divergence(trace.code)
    if lam2 > 0:
        d_mu, d_lv = kl_grad(trace.code)
        extra_mu, extra_lv = lam2 * d_mu, lam2 * d_lv
    grads = hyper.backward(model, trace, d_eta, extra_mu, extra_lv)
    terms = {"mse": mse, "kl": kl, "colors": colors, "targets": targets}
    return StageLoss(mse + lam2 * kl, terms, grads, trace.weights)


def mse_rgb255(colors_train, targets_train) -> float:
    a = quiet_convert(colors_train, TRAIN_SPACE, "rgb_255")
    b = quiet_convert(targets_train, TRAIN_SPACE, "rgb_255")
    return color_mse(a, b)


def train_stage2(dataset, shape_model, config, model=None, on_record=None, on_checkpoint=None):
    """Fit the color hypernetwork on frozen shape reconstructions.

    Shape weights for every object are computed once from the latent mean and
    never updated. Returns ``(model, records)``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    # distinct stream from stage 1 so the two stages never share draws
    init_rng, order_rng, step_rng = np.random.default_rng([config.seed, 2]).spawn(3)
    if model is None:
        model = create_color_model(config, init_rng)
    thetas = [predict_weights(shape_model, obj.cloud, use_mean=True)[0] for obj in dataset]
    clouds = [training_cloud(obj.cloud) for obj in dataset]
    sub_rng = np.random.default_rng([config.seed, 3])
    opt = hyper.Adam.from_config(config)
    records = []

    def order():
        while True:
            yield from order_rng.permutation(len(dataset))

    it = order()
    for step in range(config.steps):
        i = next(it)
        obj = dataset[i]
        prior = sample_prior(config.recon_points, config.prior, step_rng)
        cloud = subsample(clouds[i], config.recon_points, sub_rng)
        # without a KL term the latent noise only blurs the targets, so sample only when lam2 > 0
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                res = stage2_loss(model, thetas[i], cloud, prior, config.k,
                                  step_rng if config.lam2 > 0 else None, config.lam2)
            except ValueError as exc:
                if "non-finite" not in str(exc):
                    raise
                raise TrainingDiverged(f"step {step}, object {obj.object_id!r}: {exc}") from None
        if not np.isfinite(res.total):
            raise TrainingDiverged(f"non-finite stage-2 loss at step {step} on object {obj.object_id!r}")
        try:
            params = opt.step(model.params(), res.grads)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}, object {obj.object_id!r}: {exc}") from None
        model = model.replace(params)
        rec = {"step": step, "object_id": obj.object_id, "mse_lab_unit": res.terms["mse"],
               "mse_rgb255": mse_rgb255(res.terms["colors"], res.terms["targets"])}
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % 100 == 0:
            log.debug("stage2 step %d object %s mse %.6g", step, obj.object_id, res.terms["mse"])
        if on_checkpoint is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            on_checkpoint(model, step + 1)
    return model, records


def reconstruct_colored(shape_model, color_model, cloud: ColoredPointCloud, n, rng,
                        space="rgb_unit", prior_kind="ball") -> ColoredPointCloud:
    """Full reconstruction: one prior sample feeds both the shape and the color network.

    Latent means are used for both stages so the only randomness is the
    prior sample.
    """
    if n < 1:
        raise ValueError(f"number of points must be >= 1, got {n}")
    prior = sample_prior(n, prior_kind, rng)
    theta, _ = predict_weights(shape_model, cloud, use_mean=True)
    recon = reconstruct(theta, prior)
    positions = recon.positions
    if shape_model.baseline:
        colors = recon.colors
    else:
        eta, _ = predict_color_weights(color_model, cloud, use_mean=True)
        colors = colorize(eta, prior)
    return ColoredPointCloud(positions, quiet_convert(colors, TRAIN_SPACE, space), space)
