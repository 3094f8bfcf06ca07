"""Meshes from trained networks, and latent interpolation between objects.

A subdivided icosahedron is pushed through the shape network vertex by vertex
while its faces are kept as they are, so the output mesh has exactly the
sphere's topology. Vertex colors come from the color network evaluated at the
same sphere vertices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hyper, nn
from .color_stage import ColorModel, training_cloud
from .colorspace import quiet_convert
from .nn import FlatWeights, MLPSpec
from .shape_stage import training_target

MAX_SUBDIVISIONS = 7
COLOR_SPACE = "lab_unit"


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def validate(self):
        """Raise ``ValueError`` unless the mesh satisfies its invariants."""
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            bad = int(np.flatnonzero((f < 0).any(1) | (f >= len(v)).any(1))[0])
            raise ValueError(f"face {bad} references a vertex outside [0, {len(v)})")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degenerate.any():
            raise ValueError(f"face {int(np.flatnonzero(degenerate)[0])} is degenerate")
        c = self.vertex_colors
        if c is not None:
            if c.shape != v.shape:
                raise ValueError(f"{len(c)} vertex colors for {len(v)} vertices")
            if not np.all((c >= 0) & (c <= 1)):
                raise ValueError("vertex colors must lie in [0, 1]")
        return self


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(v, f):
    # each edge gets one midpoint; new indices are assigned in sorted edge order
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    m = len(f)
    ab, bc, ca = (inverse[:m] + len(v), inverse[m:2 * m] + len(v), inverse[2 * m:] + len(v))
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    nf = np.stack([
        np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
        np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
    ], axis=1).reshape(-1, 3)
    return np.concatenate([v, mid]), nf


def icosphere(subdivisions=4) -> TriangleMesh:
    """Unit icosphere with ``10 * 4**n + 2`` vertices and outward-facing triangles."""
    n = int(subdivisions)
    if n != subdivisions or n < 0:
        raise ValueError(f"subdivisions must be a non-negative integer, got {subdivisions!r}")
    if n > MAX_SUBDIVISIONS:
        raise ValueError(f"subdivisions capped at {MAX_SUBDIVISIONS}, got {n}")
    v, f = _icosahedron()
    for _ in range(n):
        v, f = _subdivide(v, f)
    return TriangleMesh(v, f)


def edge_set(faces) -> set:
    """Undirected edges as sorted index pairs."""
    f = np.asarray(faces)
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    return set(map(tuple, e.tolist()))


def is_watertight(faces) -> bool:
    """Every undirected edge shared by exactly two faces, traversed once each way."""
    f = np.asarray(faces)
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    if len(np.unique(directed, axis=0)) != len(directed):
        return False
    _, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def euler_characteristic(mesh: TriangleMesh) -> int:
    return mesh.n_vertices - len(edge_set(mesh.faces)) + mesh.n_faces


def face_normals(vertices, faces):
    v = np.asarray(vertices)
    f = np.asarray(faces)
    return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def _forward(weights, spec, points):
    spec = spec or weights.spec
    if spec is None:
        raise ValueError("weights are not bound to a spec; pass the spec explicitly")
    return nn.forward(spec, weights, points).astype(np.float64)


def _to_rgb(lab_unit):
    return np.clip(quiet_convert(np.clip(lab_unit, 0.0, 1.0), COLOR_SPACE, "rgb_unit"), 0.0, 1.0)


def triangulate(theta: FlatWeights, eta: FlatWeights | None, sphere: TriangleMesh,
                theta_spec: MLPSpec | None = None, eta_spec: MLPSpec | None = None) -> TriangleMesh:
    """Map sphere vertices through the shape network; faces are reused unchanged.

    With ``eta`` the color network colors each vertex. A six-channel (baseline)
    shape network supplies its own colors when ``eta`` is None.
    """
    out = _forward(theta, theta_spec, sphere.vertices)
    colors = None
    if eta is not None:
        colors = _to_rgb(_forward(eta, eta_spec, sphere.vertices))
    elif out.shape[1] == 6:
        colors = _to_rgb(out[:, 3:])
    return TriangleMesh(out[:, :3], sphere.faces.copy(), colors)


def _encode_mean(model, cloud):
    if isinstance(model, ColorModel):
        return hyper.predict(model, training_cloud(cloud)).code.mu
    return hyper.predict(model, training_target(cloud, model.baseline)).code.mu


def _lerp(a, b, t):
    # exact at both ends, and constant when a == b
    return b.copy() if t == 1.0 else a + t * (b - a)


def _blend(a, b, t, mode):
    if mode == "linear":
        return _lerp(a, b, t)
    if mode == "slerp":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cos = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0) if na > 0 and nb > 0 else 1.0
        omega = np.arccos(cos)
        # nearly parallel codes: slerp degenerates to the linear path
        if omega < 1e-8 or t == 0.0 or t == 1.0:
            return _lerp(a, b, t)
        s = np.sin(omega)
        return (np.sin((1.0 - t) * omega) / s) * a + (np.sin(t * omega) / s) * b
    raise ValueError(f"interpolation mode must be 'linear' or 'slerp', got {mode!r}")


def interpolate(shape_model, color_model, cloud_a, cloud_b, steps, sphere: TriangleMesh | None = None,
                mode="linear") -> list[TriangleMesh]:
    """Meshes along the latent path from A to B, ``steps`` frames including both ends.

    Both stages use latent means. ``color_model`` may be None for a baseline
    shape model, which colors its own vertices.
    """
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    sphere = sphere if sphere is not None else icosphere(4)
    za, zb = _encode_mean(shape_model, cloud_a), _encode_mean(shape_model, cloud_b)
    if color_model is not None:
        ca, cb = _encode_mean(color_model, cloud_a), _encode_mean(color_model, cloud_b)
    frames = []
    for i in range(steps):
        t = i / (steps - 1)
        theta = hyper.decode_latent(shape_model, _blend(za, zb, t, mode))
        eta = None
        if color_model is not None:
            eta = hyper.decode_latent(color_model, _blend(ca, cb, t, mode))
        frames.append(triangulate(theta, eta, sphere))
    return frames


def mesh_from_cloud(shape_model, color_model, cloud, sphere: TriangleMesh) -> TriangleMesh:
    """Direct colored mesh of one object, from latent means."""
    theta = hyper.decode_latent(shape_model, _encode_mean(shape_model, cloud))
    eta = None
    if color_model is not None:
        eta = hyper.decode_latent(color_model, _encode_mean(color_model, cloud))
    return triangulate(theta, eta, sphere)
