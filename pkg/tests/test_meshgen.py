from types import SimpleNamespace

import numpy as np
import pytest

from conftest import tiny_config
from hypercolor import color_stage as cs
from hypercolor import io, meshgen
from hypercolor import shape_stage as ss
from hypercolor.meshgen import TriangleMesh, icosphere
from hypercolor.nn import FlatWeights, MLPSpec


def identity_theta():
    spec = MLPSpec.build([3, 3])
    return FlatWeights.bind(spec, np.concatenate([np.eye(3).ravel(), np.zeros(3)]))


@pytest.mark.parametrize("n", range(5))
def test_icosphere_counts_and_topology(n):
    s = icosphere(n)
    assert s.n_vertices == 10 * 4 ** n + 2 and s.n_faces == 20 * 4 ** n
    assert len(meshgen.edge_set(s.faces)) == 30 * 4 ** n
    assert meshgen.euler_characteristic(s) == 2
    assert meshgen.is_watertight(s.faces)
    np.testing.assert_allclose(np.linalg.norm(s.vertices, axis=1), 1, atol=1e-12)
    normals = meshgen.face_normals(s.vertices, s.faces)
    centroids = s.vertices[s.faces].mean(axis=1)
    assert np.all((normals * centroids).sum(1) > 0)
    s.validate()


def test_icosphere_deterministic_and_errors():
    a, b = icosphere(3), icosphere(3)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.faces, b.faces)
    for bad in (-1, 1.5, meshgen.MAX_SUBDIVISIONS + 1):
        with pytest.raises(ValueError):
            icosphere(bad)


def test_watertight_detects_holes_and_flips():
    f = icosphere(1).faces
    assert not meshgen.is_watertight(f[1:])
    flipped = f.copy()
    flipped[0] = flipped[0, ::-1]
    assert not meshgen.is_watertight(flipped)


def test_validate_errors():
    s = icosphere(0)
    bad = s.faces.copy()
    bad[3, 1] = 99
    with pytest.raises(ValueError, match="face 3"):
        TriangleMesh(s.vertices, bad).validate()
    deg = s.faces.copy()
    deg[2] = [0, 0, 1]
    with pytest.raises(ValueError, match="degenerate"):
        TriangleMesh(s.vertices, deg).validate()
    with pytest.raises(ValueError):
        TriangleMesh(s.vertices, s.faces, np.full((12, 3), 2.0)).validate()
    v = s.vertices.copy()
    v[0, 0] = np.nan
    with pytest.raises(ValueError):
        TriangleMesh(v, s.faces).validate()


def test_identity_theta_returns_sphere():
    s = icosphere(2)
    m = meshgen.triangulate(identity_theta(), None, s)
    np.testing.assert_array_equal(m.vertices, s.vertices)
    np.testing.assert_array_equal(m.faces, s.faces)
    assert m.vertex_colors is None and m.faces is not s.faces


@pytest.mark.parametrize("n", range(5))
def test_triangulate_preserves_topology(n):
    s = icosphere(n)
    spec = MLPSpec.build([3, 8, 3])
    theta = FlatWeights.bind(spec, np.random.default_rng(n).standard_normal(spec.param_count))
    m = meshgen.triangulate(theta, None, s)
    assert (m.n_vertices, m.n_faces) == (s.n_vertices, s.n_faces)
    np.testing.assert_array_equal(m.faces, s.faces)
    assert meshgen.edge_set(m.faces) == meshgen.edge_set(s.faces)
    assert meshgen.is_watertight(m.faces)


def test_constant_eta_colors_uniformly():
    spec = MLPSpec.build([3, 4, 3], output="sigmoid")
    vals = np.zeros(spec.param_count)
    vals[-3:] = [0.0, 2.0, -2.0]
    eta = FlatWeights.bind(spec, vals)
    m = meshgen.triangulate(identity_theta(), eta, icosphere(1))
    assert np.all(m.vertex_colors == m.vertex_colors[0])
    m.validate()


@pytest.fixture(scope="module")
def trained():
    clouds = [io.normalize_unit_ball(io.make_synthetic(k, 150, np.random.default_rng(i)))[0]
              for i, k in enumerate(["cube", "two_tone_chairlike"])]
    data = [SimpleNamespace(object_id=f"o{i}", cloud=c) for i, c in enumerate(clouds)]
    cfg = tiny_config(steps=30)
    sm, _ = ss.train_stage1(data, cfg)
    cm, _ = cs.train_stage2(data, sm, cfg)
    return sm, cm, clouds


def test_interpolate_endpoints_bit_exact(trained):
    sm, cm, (a, b) = trained
    s = icosphere(2)
    frames = meshgen.interpolate(sm, cm, a, b, 2, s)
    for frame, cloud in zip(frames, (a, b)):
        direct = meshgen.mesh_from_cloud(sm, cm, cloud, s)
        np.testing.assert_array_equal(frame.vertices, direct.vertices)
        np.testing.assert_array_equal(frame.vertex_colors, direct.vertex_colors)
    assert np.abs(frames[0].vertices - frames[1].vertices).max() > 0


@pytest.mark.parametrize("mode", ["linear", "slerp"])
def test_interpolate_same_object_constant(trained, mode):
    sm, cm, (a, _) = trained
    frames = meshgen.interpolate(sm, cm, a, a, 4, icosphere(1), mode=mode)
    assert len(frames) == 4
    for f in frames[1:]:
        np.testing.assert_array_equal(f.vertices, frames[0].vertices)
        np.testing.assert_array_equal(f.vertex_colors, frames[0].vertex_colors)


def test_interpolate_errors(trained):
    sm, cm, (a, b) = trained
    with pytest.raises(ValueError):
        meshgen.interpolate(sm, cm, a, b, 1, icosphere(0))
    with pytest.raises(ValueError):
        meshgen.interpolate(sm, cm, a, b, 3, icosphere(0), mode="cubic")


def test_slerp_matches_great_circle():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    mid = meshgen._blend(a, b, 0.5, "slerp")
    np.testing.assert_allclose(mid, np.sqrt(0.5) * (a + b))


def test_trained_mesh_export_reload_byte_identical(trained, tmp_path):
    sm, cm, (a, _) = trained
    mesh = meshgen.mesh_from_cloud(sm, cm, a, icosphere(3)).validate()
    io.save_mesh_ply(mesh, tmp_path / "m.ply")
    back = io.load_mesh_ply(tmp_path / "m.ply")
    io.save_mesh_ply(back, tmp_path / "n.ply")
    assert (tmp_path / "m.ply").read_bytes() == (tmp_path / "n.ply").read_bytes()
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_baseline_mesh_self_colored(trained):
    _, _, (a, _) = trained
    bm = ss.create_shape_model(tiny_config(baseline_mode=True), np.random.default_rng(0))
    m = meshgen.mesh_from_cloud(bm, None, a, icosphere(1)).validate()
    assert m.vertex_colors is not None


def test_trained_mesh_within_reconstruction_box(trained):
    sm, cm, (_, chair) = trained
    mesh = meshgen.mesh_from_cloud(sm, cm, chair, icosphere(4)).validate()
    assert meshgen.is_watertight(mesh.faces) and mesh.vertex_colors is not None
    theta, _ = ss.predict_weights(sm, chair, use_mean=True)
    rec = ss.reconstruct(theta, ss.sample_prior(4096, "ball", np.random.default_rng(0))).positions
    lo, hi = rec.min(0), rec.max(0)
    center, half = (lo + hi) / 2, (hi - lo) / 2
    assert np.all(np.abs(mesh.vertices - center) <= 1.5 * half)
