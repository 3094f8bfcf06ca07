"""Command line interface.

Every command that writes files also writes the fully resolved config next to
its outputs, and every file is written under a temporary name and renamed into
place only once it is complete. Any error exits with a nonzero status.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, io, meshgen, metrics
from .checkpoint import CheckpointError
from .clouds import ColoredPointCloud
from .color_stage import ColorModel, reconstruct_colored, train_stage2
from .colorspace import quiet_convert
from .config import ConfigError, TrainConfig, parse_override
from .hyper import TrainingDiverged
from .io import FormatError
from .shape_stage import ShapeModel, predict_weights, reconstruct, sample_prior, train_stage1

log = logging.getLogger("hypercolor")

FORMAT = "hypercolor-model"
EVAL_METRICS = ("chamfer_shape", "mse_colors_rgb255")


# ---------------------------------------------------------------- checkpoints

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_model(path, model, kind, config: TrainConfig, extra=None):
    meta = {"format": FORMAT, "kind": kind, "config": config.to_dict(), "baseline": kind == "shape" and model.baseline}
    meta.update(extra or {})
    checkpoint.save(path, meta, model.tensors())


def load_model(path, kind):
    """``(model, meta)`` from a checkpoint, checking that it holds a ``kind`` model."""
    meta, tensors = checkpoint.load(path)
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} checkpoint")
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {meta.get('kind')!r} model, expected {kind!r}")
    config = TrainConfig.from_dict(meta["config"])
    cls = ShapeModel if kind == "shape" else ColorModel
    return cls.from_tensors(tensors, config.dtype), meta


# --------------------------------------------------------------------- output

def write_json(path, obj):
    io.atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_jsonl(path, records):
    io.atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode())


def echo_config(out_path, config: TrainConfig):
    """Resolved config beside an output file (``out.config.json``) or inside an output directory."""
    out_path = Path(out_path)
    target = out_path / "config.json" if out_path.is_dir() else out_path.with_name(out_path.name + ".config.json")
    io.atomic_write(target, config.to_json().encode())
    return target


def _check_out_dir(path):
    parent = Path(path).parent
    if not parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def _overrides(args):
    return [parse_override(s) for s in (args.set or [])]


def resolve_config(args, base=None) -> TrainConfig:
    """Config from an optional base dict (a checkpoint's), then ``--config``, then ``--set``."""
    data = dict(base or {})
    if args.config is not None:
        data.update(_read_config_file(args.config))
    for key, value in _overrides(args):
        data[key] = value
    return TrainConfig.from_dict(data)


def _read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(TrainConfig.keys()))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return data


def _load_input(path):
    cloud, center, scale = io.normalize_unit_ball(io.load_cloud(path))
    return cloud, center, scale


# ------------------------------------------------------------------- commands

def cmd_train_shape(args):
    config = resolve_config(args)
    _check_out_dir(args.out)
    dataset = io.DatasetManifest.load(args.manifest).load_objects(args.split)
    if not dataset:
        raise ValueError(f"manifest {args.manifest} has no objects in split {args.split!r}")

    def on_checkpoint(model, step):
        save_model(args.out, model, "shape", config, {"steps_done": step})

    model, records = train_stage1(dataset, config, on_checkpoint=on_checkpoint)
    save_model(args.out, model, "shape", config, {"steps_done": config.steps})
    write_jsonl(args.log or f"{args.out}.log.jsonl", records)
    echo_config(args.out, config)
    log.info("stage 1 done: final chamfer %.6g", records[-1]["chamfer"])
    return 0


def cmd_train_color(args):
    config = resolve_config(args)
    _check_out_dir(args.out)
    shape, shape_meta = load_model(args.shape, "shape")
    if shape.baseline:
        raise ValueError("a baseline shape checkpoint already emits colors; there is no color stage to train")
    digest = file_sha256(args.shape)
    dataset = io.DatasetManifest.load(args.manifest).load_objects(args.split)
    if not dataset:
        raise ValueError(f"manifest {args.manifest} has no objects in split {args.split!r}")
    extra = {"shape_sha256": digest}

    def on_checkpoint(model, step):
        save_model(args.out, model, "color", config, {**extra, "steps_done": step})

    model, records = train_stage2(dataset, shape, config, on_checkpoint=on_checkpoint)
    if file_sha256(args.shape) != digest:
        raise RuntimeError(f"shape checkpoint {args.shape} changed during color training")
    save_model(args.out, model, "color", config, {**extra, "steps_done": config.steps})
    write_jsonl(args.log or f"{args.out}.log.jsonl", records)
    echo_config(args.out, config)
    log.info("stage 2 done: final mse (lab_unit) %.6g", records[-1]["mse_lab_unit"])
    return 0


def load_pipeline(args):
    """Shape model, optional color model, and the config that drives inference."""
    shape, meta = load_model(args.shape, "shape")
    color = None
    if getattr(args, "color", None):
        if shape.baseline:
            raise ValueError("a baseline shape checkpoint cannot be paired with a color checkpoint")
        color, cmeta = load_model(args.color, "color")
        expected = cmeta.get("shape_sha256")
        if expected is not None and expected != file_sha256(args.shape):
            log.warning("color checkpoint %s was trained on a different shape checkpoint", args.color)
    config = resolve_config(args, base=meta["config"])
    return shape, color, config


def _dataset_object_rng(config, index):
    return np.random.default_rng([config.seed, 4, index])


def cmd_reconstruct(args):
    shape, color, config = load_pipeline(args)
    _check_out_dir(args.out)
    if args.n < 1:
        raise ValueError(f"-n must be >= 1, got {args.n}")
    cloud, center, scale = _load_input(args.input)
    rng = np.random.default_rng([config.seed, 5])
    if color is None and not shape.baseline:
        theta, _ = predict_weights(shape, cloud, use_mean=True)
        out = reconstruct(theta, sample_prior(args.n, config.prior, rng))
    else:
        if not isinstance(cloud, ColoredPointCloud):
            raise ValueError(f"{args.input}: colored reconstruction needs a colored input cloud")
        out = reconstruct_colored(shape, color, cloud, args.n, rng, space="rgb_unit", prior_kind=config.prior)
    if not args.normalized:
        out = io.denormalize(out, center, scale)
    io.save_cloud(out, args.out, binary=not args.ascii)
    echo_config(args.out, config)
    return 0


def cmd_mesh(args):
    shape, color, config = load_pipeline(args)
    _check_out_dir(args.out)
    cloud, center, scale = _load_input(args.input)
    mesh = meshgen.mesh_from_cloud(shape, color, cloud, meshgen.icosphere(args.subdivisions))
    if not args.normalized:
        mesh.vertices = mesh.vertices * scale + center
    io.save_mesh_ply(mesh, args.out, binary=not args.ascii)
    echo_config(args.out, config)
    return 0


def cmd_interpolate(args):
    shape, color, config = load_pipeline(args)
    outdir = Path(args.outdir)
    if not outdir.parent.exists():
        raise FileNotFoundError(f"parent of output directory does not exist: {outdir.parent}")
    cloud_a, _, _ = _load_input(args.a)
    cloud_b, _, _ = _load_input(args.b)
    frames = meshgen.interpolate(shape, color, cloud_a, cloud_b, args.steps,
                                 meshgen.icosphere(args.subdivisions), mode=args.mode)
    outdir.mkdir(exist_ok=True)
    for i, mesh in enumerate(frames):
        io.save_mesh_ply(mesh, outdir / f"frame_{i:04d}.ply", binary=not args.ascii)
    echo_config(outdir, config)
    return 0


def evaluate(shape, color, dataset, config):
    """Per-object metrics and their mean and population standard deviation.

    Both the original and the reconstruction are subsampled to
    ``config.recon_points``; reconstructed colors are compared in 0-255 RGB
    with the color of the nearest original point.
    """
    rows = []
    for i, obj in enumerate(sorted(dataset, key=lambda o: o.object_id)):
        if not isinstance(obj.cloud, ColoredPointCloud):
            raise ValueError(f"object {obj.object_id!r} has no colors")
        rng = _dataset_object_rng(config, i)
        original = io.subsample(obj.cloud, config.recon_points, rng)
        recon = reconstruct_colored(shape, color, obj.cloud, config.recon_points, rng,
                                    space="rgb_unit", prior_kind=config.prior)
        targets = metrics.knn_align(recon, original, 1)
        rows.append({
            "object_id": obj.object_id,
            "chamfer_shape": metrics.chamfer(recon.positions, original.positions),
            "mse_colors_rgb255": metrics.color_mse(quiet_convert(recon.colors, "rgb_unit", "rgb_255"),
                                                   quiet_convert(targets, "rgb_unit", "rgb_255")),
        })
    aggregate = {}
    for key in EVAL_METRICS:
        vals = np.array([r[key] for r in rows])
        aggregate[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return {"objects": rows, "aggregate": aggregate, "n_objects": len(rows)}


def cmd_eval(args):
    shape, color, config = load_pipeline(args)
    if color is None and not shape.baseline:
        raise ValueError("eval needs --color unless the shape checkpoint is a baseline model")
    _check_out_dir(args.out)
    dataset = io.DatasetManifest.load(args.manifest).load_objects(args.split)
    if not dataset:
        raise ValueError(f"manifest {args.manifest} has no objects in split {args.split!r}")
    report = evaluate(shape, color, dataset, config)
    write_json(args.out, report)
    echo_config(args.out, config)
    for key in EVAL_METRICS:
        a = report["aggregate"][key]
        print(f"{key}: {a['mean']:.6g} +/- {a['std']:.6g}")
    return 0


def cmd_make_synthetic(args):
    kinds = tuple(args.kinds.split(","))
    for k in kinds:
        if k not in ("cube", "sphere", "two_tone_chairlike"):
            raise ValueError(f"unknown synthetic kind {k!r}")
    manifest = io.write_synthetic_dataset(args.outdir, args.count, args.points, args.seed, kinds,
                                          args.test_fraction)
    print(manifest)
    return 0


# --------------------------------------------------------------------- parser

def _common(p, config=True):
    if config:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")


def _models(p, color_required=False):
    p.add_argument("--shape", required=True, help="stage-1 checkpoint")
    p.add_argument("--color", required=color_required, help="stage-2 checkpoint (omit for baseline models)")


def build_parser():
    parser = argparse.ArgumentParser(prog="hypercolor", description="Two-stage colored point cloud hypernetworks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-shape", help="train the stage-1 shape hypernetwork")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL training log (default: OUT.log.jsonl)")
    p.set_defaults(func=cmd_train_shape)

    p = sub.add_parser("train-color", help="train the stage-2 color hypernetwork on a frozen shape model")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--shape", required=True, help="frozen stage-1 checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_color)

    p = sub.add_parser("reconstruct", help="reconstruct a (colored) point cloud")
    _common(p)
    _models(p)
    p.add_argument("--input", required=True)
    p.add_argument("-n", type=int, default=2048, help="number of points")
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--normalized", action="store_true", help="keep the unit-ball frame")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("mesh", help="colored mesh via a deformed icosphere")
    _common(p)
    _models(p)
    p.add_argument("--input", required=True)
    p.add_argument("--subdivisions", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--normalized", action="store_true")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("interpolate", help="mesh frames along the latent path between two clouds")
    _common(p)
    _models(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--subdivisions", type=int, default=4)
    p.add_argument("--mode", choices=("linear", "slerp"), default="linear")
    p.add_argument("--outdir", required=True)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="Chamfer and color error report over a manifest")
    _common(p)
    _models(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-synthetic", help="write a synthetic colored dataset and manifest")
    p.add_argument("--outdir", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--kinds", default="two_tone_chairlike")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FormatError, FileNotFoundError, TrainingDiverged,
            ValueError, RuntimeError, OSError) as exc:
        print(f"hypercolor {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
