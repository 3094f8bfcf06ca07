from types import SimpleNamespace

import numpy as np
import pytest

from conftest import tiny_config
from hypercolor import checkpoint, hyper, io, metrics, nn
from hypercolor import color_stage as cs
from hypercolor import shape_stage as ss
from hypercolor.clouds import ColoredPointCloud, PointCloud
from hypercolor.hyper import TrainingDiverged
from hypercolor.nn import FlatWeights, MLPSpec


def obj(cloud, oid="a"):
    return SimpleNamespace(object_id=oid, cloud=cloud)


@pytest.fixture(scope="module")
def cube():
    return io.normalize_unit_ball(io.make_synthetic("cube", 200, np.random.default_rng(0)))[0]


# ---------------------------------------------------------------- prior

def test_ball_prior_volume_ratio_and_bounds():
    p = ss.sample_prior(1000, "ball", np.random.default_rng(0))
    r = np.linalg.norm(p.points, axis=1)
    assert p.kind == "ball" and r.max() <= 1.0
    assert abs((r <= 0.5).mean() - 0.125) < 0.04


def test_sphere_prior_unit_norm():
    p = ss.sample_prior(1000, "sphere", np.random.default_rng(0))
    assert np.all(np.abs(np.linalg.norm(p.points, axis=1) - 1) < 1e-9)


def test_ball_prior_mean_monte_carlo():
    p = ss.sample_prior(100_000, "ball", np.random.default_rng(3))
    assert np.all(np.abs(p.points.mean(0)) < 0.01)


def test_prior_errors_and_determinism():
    with pytest.raises(ValueError):
        ss.sample_prior(0)
    with pytest.raises(ValueError):
        ss.sample_prior(5, "cube")
    a = ss.sample_prior(7, "ball", np.random.default_rng(1)).points
    np.testing.assert_array_equal(a, ss.sample_prior(7, "ball", np.random.default_rng(1)).points)


# ---------------------------------------------------------------- stage 1

def test_weight_head_matches_target_param_count():
    m = ss.create_shape_model(tiny_config(), np.random.default_rng(0))
    assert m.head_spec.d_out == m.target_spec.param_count
    assert m.target_spec.layer_widths == (3, 8, 3)


def test_predict_weights_deterministic_and_permutation_invariant(cube):
    m = ss.create_shape_model(tiny_config(), np.random.default_rng(0))
    a, _ = ss.predict_weights(m, cube, np.random.default_rng(5))
    b, _ = ss.predict_weights(m, cube, np.random.default_rng(5))
    perm = np.random.default_rng(1).permutation(len(cube))
    c, _ = ss.predict_weights(m, PointCloud(cube.positions[perm]), np.random.default_rng(5))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values, c.values)
    assert a.spec == m.target_spec


def test_reconstruct_identity_network_and_single_point():
    spec = MLPSpec.build([3, 3])
    theta = FlatWeights.bind(spec, np.concatenate([np.eye(3).ravel(), np.zeros(3)]))
    prior = ss.sample_prior(50, "sphere", np.random.default_rng(2))
    np.testing.assert_array_equal(ss.reconstruct(theta, prior).positions, prior.points)
    one = ss.reconstruct(theta, ss.sample_prior(1, "ball", np.random.default_rng(2)))
    assert len(one) == 1 and np.all(np.isfinite(one.positions))


def test_reconstruct_cardinality_follows_prior(cube):
    m = ss.create_shape_model(tiny_config(), np.random.default_rng(0))
    theta, _ = ss.predict_weights(m, cube, use_mean=True)
    for n in (1, 17, 3000):
        assert len(ss.reconstruct(theta, ss.sample_prior(n, "ball", np.random.default_rng(0)))) == n


def test_stage1_loss_lambda_zero_is_chamfer(cube):
    m = ss.create_shape_model(tiny_config(), np.random.default_rng(0))
    prior = ss.sample_prior(32, "ball", np.random.default_rng(1))
    res = ss.stage1_loss(m, cube, prior, 0.0, np.random.default_rng(2))
    recon = ss.reconstruct(res.theta, prior)
    assert res.total == metrics.chamfer(recon, cube) > 0
    with pytest.raises(ValueError):
        ss.stage1_loss(m, cube, prior, -1.0)


def test_stage1_loss_permutation_invariant(cube):
    m = ss.create_shape_model(tiny_config(), np.random.default_rng(0))
    prior = ss.sample_prior(32, "ball", np.random.default_rng(1))
    perm = np.random.default_rng(9).permutation(len(cube))
    a = ss.stage1_loss(m, cube, prior, 0.0, np.random.default_rng(2)).total
    b = ss.stage1_loss(m, PointCloud(cube.positions[perm]), prior, 0.0, np.random.default_rng(2)).total
    assert a == b


@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_stage1_end_to_end_gradients(lam):
    cfg = tiny_config()
    m = ss.create_shape_model(cfg, np.random.default_rng(0))
    cloud = PointCloud([[0.3, -0.2, 0.5], [-0.4, 0.1, -0.6]])
    prior = ss.sample_prior(6, "ball", np.random.default_rng(1))

    def loss(model):
        return ss.stage1_loss(model, cloud, prior, lam, np.random.default_rng(3))

    assert hyper.grad_check_model(m, loss) < 1e-4
    assert np.abs(loss(m).grads["hyper"].values).max() > 0


def test_train_stage1_deterministic_and_logs(cube):
    cfg = tiny_config(steps=6)
    _, r1 = ss.train_stage1([obj(cube)], cfg)
    _, r2 = ss.train_stage1([obj(cube)], cfg)
    assert r1 == r2
    assert set(r1[0]) == {"step", "object_id", "chamfer", "kl", "total"}
    assert [r["step"] for r in r1] == list(range(6))


def test_train_stage1_checkpoint_callback(cube):
    seen = []
    ss.train_stage1([obj(cube)], tiny_config(steps=6, checkpoint_every=2),
                    on_checkpoint=lambda model, step: seen.append(step))
    assert seen == [2, 4, 6]


def test_train_stage1_divergence_reports_step_and_object(cube):
    with pytest.raises(TrainingDiverged, match=r"step \d+.*'bad'"):
        ss.train_stage1([obj(cube, "bad")], tiny_config(steps=50, lr=1e150))


def test_train_stage1_rejects_empty():
    with pytest.raises(ValueError):
        ss.train_stage1([], tiny_config())


def test_stage1_converges_and_kl_tradeoff(cube):
    runs = {}
    for lam in (0.0, 1e3):
        model, rec = ss.train_stage1([obj(cube)], tiny_config(steps=300, lam=lam))
        runs[lam] = rec
    first = runs[0.0][0]["chamfer"]
    late = lambda rec, key: np.mean([r[key] for r in rec[-20:]])
    assert late(runs[0.0], "chamfer") < 0.5 * first
    assert runs[1e3][-1]["kl"] < 0.01
    assert late(runs[1e3], "chamfer") > late(runs[0.0], "chamfer")


def test_trained_objects_get_distinct_thetas(cube):
    other = io.normalize_unit_ball(io.make_synthetic("sphere", 200, np.random.default_rng(1)))[0]
    model, _ = ss.train_stage1([obj(cube, "a"), obj(other, "b")], tiny_config(steps=40))
    ta, _ = ss.predict_weights(model, cube, use_mean=True)
    tb, _ = ss.predict_weights(model, other, use_mean=True)
    assert np.abs(ta.values - tb.values).max() > 0


def test_baseline_mode_six_channels(cube):
    cfg = tiny_config(baseline_mode=True)
    m = ss.create_shape_model(cfg, np.random.default_rng(0))
    assert m.baseline and m.encoder.channels == 6 and m.target_spec.d_out == 6
    prior = ss.sample_prior(16, "ball", np.random.default_rng(1))
    res = ss.stage1_loss(m, cube, prior, 0.0)
    assert np.isfinite(res.total)
    rec = ss.reconstruct(res.theta, prior)
    assert isinstance(rec, ColoredPointCloud) and rec.space == "lab_unit"
    assert rec.colors.min() >= 0 and rec.colors.max() <= 1
    with pytest.raises(ValueError):
        ss.stage1_loss(m, cube.shape_only(), prior)


# ---------------------------------------------------------------- stage 2

@pytest.fixture(scope="module")
def shape_model(cube):
    return ss.train_stage1([obj(cube)], tiny_config(steps=60))[0]


def constant_eta_model(cfg, lab_unit_color):
    """Color model whose weight head ignores the latent and emits a constant network."""
    m = cs.create_color_model(cfg, np.random.default_rng(0))
    ws, _, bs = list(m.head_spec.layer_slices())[-1]
    m.head.values[ws] = 0.0
    eta = np.zeros(m.target_spec.param_count)
    _, _, last_b = list(m.target_spec.layer_slices())[-1]
    c = np.asarray(lab_unit_color)
    eta[last_b] = np.log(c / (1 - c))
    m.head.values[bs] = eta
    return m


def test_color_model_spec():
    m = cs.create_color_model(tiny_config(), np.random.default_rng(0))
    assert m.encoder.channels == 6
    assert m.target_spec.activations[-1] == "sigmoid"
    assert m.head_spec.d_out == m.target_spec.param_count


def test_predict_color_weights_requires_colors(cube):
    m = cs.create_color_model(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        cs.predict_color_weights(m, cube.shape_only())
    perm = np.random.default_rng(1).permutation(len(cube))
    a, _ = cs.predict_color_weights(m, cube, np.random.default_rng(3))
    b, _ = cs.predict_color_weights(m, ColoredPointCloud(cube.positions[perm], cube.colors[perm]),
                                    np.random.default_rng(3))
    np.testing.assert_array_equal(a.values, b.values)


def test_colorize_constant_network_and_bounds(cube):
    m = constant_eta_model(tiny_config(), [0.3, 0.6, 0.2])
    eta, _ = cs.predict_color_weights(m, cube)
    cols = cs.colorize(eta, ss.sample_prior(40, "ball", np.random.default_rng(0)))
    assert np.all(cols == cols[0])
    np.testing.assert_allclose(cols[0], [0.3, 0.6, 0.2], atol=1e-12)
    one = cs.colorize(eta, ss.sample_prior(1, "ball", np.random.default_rng(0)))
    assert one.shape == (1, 3)
    wild = FlatWeights.bind(m.target_spec, 50 * np.random.default_rng(0).standard_normal(m.target_spec.param_count))
    out = cs.colorize(wild, ss.sample_prior(100, "ball", np.random.default_rng(1)))
    assert out.min() >= 0 and out.max() <= 1


def test_stage2_loss_zero_when_colors_match(cube, shape_model):
    cfg = tiny_config()
    m = constant_eta_model(cfg, [0.3, 0.6, 0.2])
    prior = ss.sample_prior(32, "ball", np.random.default_rng(1))
    eta, _ = cs.predict_color_weights(m, cube)
    target = cs.colorize(eta, prior)[0]
    cloud = ColoredPointCloud(cube.positions, np.tile(target, (len(cube), 1)), "lab_unit")
    theta, _ = ss.predict_weights(shape_model, cube, use_mean=True)
    assert cs.stage2_loss(m, theta, cloud, prior).total == 0.0


def test_stage2_untrained_loss_positive(cube, shape_model):
    m = cs.create_color_model(tiny_config(), np.random.default_rng(0))
    theta, _ = ss.predict_weights(shape_model, cube, use_mean=True)
    res = cs.stage2_loss(m, theta, cube, ss.sample_prior(32, "ball", np.random.default_rng(1)))
    assert np.isfinite(res.total) and res.total > 0


@pytest.mark.parametrize("k,lam2", [(1, 0.0), (3, 0.2)])
def test_stage2_end_to_end_gradients(k, lam2, cube, shape_model):
    m = cs.create_color_model(tiny_config(), np.random.default_rng(4))
    theta, _ = ss.predict_weights(shape_model, cube, use_mean=True)
    small = ColoredPointCloud(cube.positions[:20], cube.colors[:20])
    prior = ss.sample_prior(8, "ball", np.random.default_rng(1))

    def loss(model):
        return cs.stage2_loss(model, theta, small, prior, k, np.random.default_rng(5), lam2)

    assert hyper.grad_check_model(m, loss) < 1e-4


def test_train_stage2_leaves_shape_model_untouched(cube, shape_model):
    before = checkpoint.encode({}, shape_model.tensors())
    _, r1 = cs.train_stage2([obj(cube)], shape_model, tiny_config(steps=8))
    _, r2 = cs.train_stage2([obj(cube)], shape_model, tiny_config(steps=8))
    assert checkpoint.encode({}, shape_model.tensors()) == before
    assert r1 == r2
    assert set(r1[0]) == {"step", "object_id", "mse_lab_unit", "mse_rgb255"}


def test_train_stage2_constant_color_fit(cube, shape_model):
    const = ColoredPointCloud(cube.positions, np.tile([0.2, 0.6, 0.3], (len(cube), 1)))
    _, rec = cs.train_stage2([obj(const)], shape_model, tiny_config(steps=300))
    assert rec[-1]["mse_lab_unit"] < 1e-4
    assert rec[-1]["mse_lab_unit"] < 0.1 * rec[0]["mse_lab_unit"]


def test_reconstruct_colored_composition(cube, shape_model):
    cm = cs.create_color_model(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        cs.reconstruct_colored(shape_model, cm, cube, 0, np.random.default_rng(0))
    a = cs.reconstruct_colored(shape_model, cm, cube, 50, np.random.default_rng(8), space="lab_unit")
    b = cs.reconstruct_colored(shape_model, cm, cube, 50, np.random.default_rng(8), space="lab_unit")
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.colors, b.colors)
    prior = ss.sample_prior(50, "ball", np.random.default_rng(8))
    theta, _ = ss.predict_weights(shape_model, cube, use_mean=True)
    eta, _ = cs.predict_color_weights(cm, cube, use_mean=True)
    np.testing.assert_array_equal(a.positions, ss.reconstruct(theta, prior).positions)
    np.testing.assert_array_equal(a.colors, cs.colorize(eta, prior))
    rgb = cs.reconstruct_colored(shape_model, cm, cube, 50, np.random.default_rng(8))
    assert rgb.space == "rgb_unit" and rgb.colors.min() >= 0 and rgb.colors.max() <= 1


def test_reconstruct_colored_baseline(cube):
    m = ss.create_shape_model(tiny_config(baseline_mode=True), np.random.default_rng(0))
    out = cs.reconstruct_colored(m, None, cube, 30, np.random.default_rng(1))
    assert isinstance(out, ColoredPointCloud) and out.colors.shape == (30, 3)
