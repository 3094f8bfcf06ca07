"""Point cloud and mesh files, normalization, datasets and synthetic shapes.

Colors are held in unit scale internally; 0-255 bytes appear only inside
files. PLY is the canonical output format.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clouds import ColoredPointCloud, PointCloud
from .colorspace import quiet_convert


class FormatError(ValueError):
    pass


# PLY scalar types -> little-endian numpy dtypes
PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
COLOR_NAMES = (("red", "green", "blue"), ("r", "g", "b"), ("diffuse_red", "diffuse_green", "diffuse_blue"))


@dataclass
class PlyElement:
    name: str
    count: int
    # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
    properties: list = field(default_factory=list)

    @property
    def has_lists(self):
        return any(len(p) == 3 for p in self.properties)


def _parse_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError(f"{path}: not a PLY file (line 1)")
    fmt = None
    elements = []
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise FormatError(f"{path}: header ended without end_header (line {line_no})")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}: unsupported PLY format {' '.join(tokens[1:])!r} (line {line_no})")
            fmt = tokens[1]
        elif key == "element":
            if len(tokens) != 3:
                raise FormatError(f"{path}: malformed element line (line {line_no})")
            try:
                count = int(tokens[2])
            except ValueError:
                raise FormatError(f"{path}: bad element count {tokens[2]!r} (line {line_no})") from None
            elements.append(PlyElement(tokens[1], count))
        elif key == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element (line {line_no})")
            if len(tokens) == 5 and tokens[1] == "list":
                for t in tokens[2:4]:
                    if t not in PLY_TYPES:
                        raise FormatError(f"{path}: unsupported PLY type {t!r} for property {tokens[4]!r}")
                elements[-1].properties.append((tokens[4], PLY_TYPES[tokens[2]], PLY_TYPES[tokens[3]]))
            elif len(tokens) == 3:
                if tokens[1] not in PLY_TYPES:
                    raise FormatError(f"{path}: unsupported PLY type {tokens[1]!r} for property {tokens[2]!r}")
                elements[-1].properties.append((tokens[2], PLY_TYPES[tokens[1]]))
            else:
                raise FormatError(f"{path}: malformed property line (line {line_no})")
        elif key == "end_header":
            break
        else:
            raise FormatError(f"{path}: unknown header keyword {key!r} (line {line_no})")
    if fmt is None:
        raise FormatError(f"{path}: PLY header has no format line")
    return fmt, elements, line_no


def _read_binary_element(buf, pos, el, path):
    if not el.has_lists:
        dtype = np.dtype([(name, "<" + t) for name, t in el.properties])
        need = dtype.itemsize * el.count
        if pos + need > len(buf):
            have = (len(buf) - pos) // max(dtype.itemsize, 1)
            raise FormatError(
                f"{path}: element {el.name!r} truncated at byte offset {pos + have * dtype.itemsize}: "
                f"header declares {el.count} rows, data holds {have}"
            )
        arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
        return {name: arr[name].copy() for name, _ in el.properties}, pos + need
    fast = _read_uniform_lists(buf, pos, el)
    if fast is not None:
        return fast
    out = {name: [] for name, *_ in el.properties}
    for row in range(el.count):
        for prop in el.properties:
            if len(prop) == 2:
                name, t = prop
                size = np.dtype(t).itemsize
                if pos + size > len(buf):
                    raise FormatError(f"{path}: element {el.name!r} row {row} truncated at byte offset {pos}")
                out[name].append(np.frombuffer(buf, "<" + t, 1, pos)[0])
                pos += size
            else:
                name, ct, it = prop
                csize = np.dtype(ct).itemsize
                if pos + csize > len(buf):
                    raise FormatError(f"{path}: element {el.name!r} row {row} truncated at byte offset {pos}")
                n = int(np.frombuffer(buf, "<" + ct, 1, pos)[0])
                pos += csize
                isize = np.dtype(it).itemsize * n
                if pos + isize > len(buf):
                    raise FormatError(f"{path}: element {el.name!r} row {row} truncated at byte offset {pos}")
                out[name].append(np.frombuffer(buf, "<" + it, n, pos).copy())
                pos += isize
    return {k: _stack(v) for k, v in out.items()}, pos


def _read_uniform_lists(buf, pos, el):
    """Vectorized read when every list in the element has the first row's length."""
    if pos >= len(buf):
        return None
    fields, probe = [], pos
    for prop in el.properties:
        if len(prop) == 2:
            fields.append((prop[0], "<" + prop[1]))
            probe += np.dtype(prop[1]).itemsize
        else:
            name, ct, it = prop
            if probe + np.dtype(ct).itemsize > len(buf):
                return None
            n = int(np.frombuffer(buf, "<" + ct, 1, probe)[0])
            fields += [(name + "#n", "<" + ct), (name, "<" + it, (n,))]
            probe += np.dtype(ct).itemsize + np.dtype(it).itemsize * n
    dtype = np.dtype(fields)
    if pos + dtype.itemsize * el.count > len(buf):
        return None
    arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
    for prop in el.properties:
        if len(prop) == 3 and not np.all(arr[prop[0] + "#n"] == dtype[prop[0]].shape[0]):
            return None
    return {p[0]: arr[p[0]].copy() for p in el.properties}, pos + dtype.itemsize * el.count


def _stack(values):
    if values and isinstance(values[0], np.ndarray):
        lengths = {len(v) for v in values}
        if len(lengths) == 1:
            return np.stack(values)
        return values
    return np.asarray(values)


def _read_ascii_element(lines, line_no, el, path):
    out = {name: [] for name, *_ in el.properties}
    for row in range(el.count):
        raw = next(lines, None)
        line_no += 1
        if raw is None:
            raise FormatError(
                f"{path}: element {el.name!r} ends after {row} of {el.count} rows (line {line_no})"
            )
        tokens = raw.split()
        pos = 0
        try:
            for prop in el.properties:
                if len(prop) == 2:
                    name, t = prop
                    out[name].append(float(tokens[pos]) if t[0] == "f" else int(tokens[pos]))
                    pos += 1
                else:
                    name = prop[0]
                    n = int(tokens[pos])
                    vals = tokens[pos + 1:pos + 1 + n]
                    if len(vals) != n:
                        raise IndexError
                    out[name].append(np.array([int(v) for v in vals], dtype=prop[2]))
                    pos += 1 + n
        except (IndexError, ValueError):
            raise FormatError(f"{path}: malformed row for element {el.name!r} (line {line_no})") from None
        if pos != len(tokens):
            raise FormatError(f"{path}: unexpected extra values for element {el.name!r} (line {line_no})")
    result = {}
    for prop in el.properties:
        vals = out[prop[0]]
        result[prop[0]] = _stack(vals) if len(prop) == 3 else np.asarray(vals, dtype=prop[1])
    return result, line_no


def read_ply(path):
    """Parse a PLY file into ``{element_name: {property: array}}``."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh, path)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = iter(body.decode("ascii", errors="replace").splitlines())
        line_no = header_lines
        for el in elements:
            data[el.name], line_no = _read_ascii_element(lines, line_no, el, path)
    else:
        pos = 0
        for el in elements:
            data[el.name], pos = _read_binary_element(body, pos, el, path)
    return data, elements


def _ply_colors(vertex, el):
    names = [p[0] for p in el.properties]
    for triple in COLOR_NAMES:
        if all(n in names for n in triple):
            types = {dict((p[0], p[1]) for p in el.properties if len(p) == 2)[n] for n in triple}
            cols = np.stack([vertex[n] for n in triple], axis=1).astype(np.float64)
            if types == {"u1"}:
                return cols / 255.0
            if types <= {"f4", "f8"}:
                return cols
            raise FormatError(f"unsupported color property type(s) {sorted(types)}")
    return None


def _load_ply(path):
    data, elements = read_ply(path)
    el = next((e for e in elements if e.name == "vertex"), None)
    if el is None:
        raise FormatError(f"{path}: PLY file has no vertex element")
    if el.has_lists:
        bad = next(p[0] for p in el.properties if len(p) == 3)
        raise FormatError(f"{path}: unsupported list property {bad!r} in vertex element")
    vertex = data["vertex"]
    for n in ("x", "y", "z"):
        if n not in vertex:
            raise FormatError(f"{path}: vertex element lacks property {n!r}")
    pos = np.stack([vertex[n] for n in ("x", "y", "z")], axis=1).astype(np.float64)
    return pos, _ply_colors(vertex, el), data


def _load_text_rows(path, kind):
    rows, colors = [], []
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, 1):
            tokens = line.split()
            if kind == "obj":
                if not tokens or tokens[0] != "v":
                    continue
                tokens = tokens[1:]
                if len(tokens) not in (3, 4, 6, 7):
                    raise FormatError(f"{path}: malformed vertex (line {line_no})")
                if len(tokens) in (4, 7):  # optional w coordinate
                    tokens = tokens[:3] + tokens[4:]
            else:
                if not tokens or tokens[0].startswith("#"):
                    continue
                if len(tokens) not in (3, 6):
                    raise FormatError(f"{path}: expected 3 or 6 columns, got {len(tokens)} (line {line_no})")
            try:
                vals = [float(t) for t in tokens]
            except ValueError:
                raise FormatError(f"{path}: non-numeric value (line {line_no})") from None
            rows.append(vals[:3])
            colors.append(vals[3:] if len(vals) == 6 else None)
    if not rows:
        raise FormatError(f"{path}: no points found")
    have = [c is not None for c in colors]
    if any(have) and not all(have):
        first = have.index(not have[0]) + 1
        raise FormatError(f"{path}: mixed rows with and without colors (point {first})")
    pos = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(colors, dtype=np.float64) if all(have) else None
    if cols is not None and cols.max() > 1.0:
        cols = cols / 255.0
    return pos, cols


def load_cloud(path, format=None):
    """Read a point cloud; returns a :class:`ColoredPointCloud` when colors are present.

    ``format`` is ``"ply"``, ``"obj"`` or ``"xyz"`` and defaults to the file suffix.
    Colors above 1 in OBJ/XYZ files are taken to be on the 0-255 scale.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "ply":
        pos, cols, _ = _load_ply(path)
    elif fmt in ("obj", "xyz", "txt"):
        pos, cols = _load_text_rows(path, "obj" if fmt == "obj" else "xyz")
    else:
        raise FormatError(f"{path}: unknown point cloud format {fmt!r}")
    if len(pos) == 0:
        raise FormatError(f"{path}: file holds no points")
    if not np.all(np.isfinite(pos)):
        raise FormatError(f"{path}: non-finite coordinates")
    if cols is None:
        return PointCloud(pos)
    if cols.min() < 0 or cols.max() > 1:
        raise FormatError(f"{path}: colors outside the unit range")
    return ColoredPointCloud(pos, cols, "rgb_unit")


def color_bytes(colors):
    """Unit colors to uint8 using round-half-up, clamped to [0, 255]."""
    return np.clip(np.floor(np.asarray(colors, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _fmt_float(v):
    return "%.9g" % v


def _ply_bytes(positions, colors, faces, binary):
    n = len(positions)
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              f"element vertex {n}", "property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    pos32 = np.asarray(positions, dtype=np.float32)
    cbytes = color_bytes(colors) if colors is not None else None
    if binary:
        fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        if cbytes is not None:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.empty(n, dtype=fields)
        rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
        if cbytes is not None:
            rec["red"], rec["green"], rec["blue"] = cbytes[:, 0], cbytes[:, 1], cbytes[:, 2]
        body = rec.tobytes()
        if faces is not None:
            frec = np.empty(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            frec["n"] = 3
            frec["i"] = faces
            body += frec.tobytes()
        return head + body
    lines = []
    for i in range(n):
        row = " ".join(_fmt_float(v) for v in pos32[i])
        if cbytes is not None:
            row += " " + " ".join(str(int(c)) for c in cbytes[i])
        lines.append(row)
    if faces is not None:
        lines += ["3 " + " ".join(str(int(j)) for j in f) for f in faces]
    return head + ("\n".join(lines) + "\n").encode("ascii")


def save_cloud(cloud, path, binary=True):
    """Write a cloud as PLY (colors converted to 8-bit sRGB)."""
    colors = None
    if isinstance(cloud, ColoredPointCloud):
        colors = quiet_convert(cloud.colors, cloud.space, "rgb_unit")
    atomic_write(path, _ply_bytes(cloud.positions, colors, None, binary))


def save_mesh_ply(mesh, path, binary=True):
    """Write a triangle mesh, with vertex colors if it has them, as PLY."""
    mesh.validate()
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"cannot write {path}: directory does not exist")
    atomic_write(path, _ply_bytes(mesh.vertices, mesh.vertex_colors, mesh.faces, binary))


def load_mesh_ply(path):
    from .meshgen import TriangleMesh

    pos, cols, data = _load_ply(path)
    face = data.get("face")
    if face is None:
        raise FormatError(f"{path}: no face element")
    key = "vertex_indices" if "vertex_indices" in face else next(iter(face))
    faces = face[key]
    if isinstance(faces, list) or faces.ndim != 2 or faces.shape[1] != 3:
        raise FormatError(f"{path}: only triangle faces are supported")
    return TriangleMesh(pos, faces.astype(np.int64), cols)


def normalize_unit_ball(cloud):
    """Center on the centroid and scale so the farthest point has norm 1.

    Returns ``(normalized_cloud, center, scale)``.
    """
    pos = cloud.positions if isinstance(cloud, (PointCloud, ColoredPointCloud)) else np.asarray(cloud, float)
    if len(pos) == 0:
        raise ValueError("cannot normalize an empty cloud")
    center = pos.mean(axis=0)
    shifted = pos - center
    scale = float(np.sqrt((shifted * shifted).sum(axis=1)).max())
    if scale == 0.0:
        raise ValueError("all points coincide; cannot normalize")
    out = shifted / scale
    if isinstance(cloud, ColoredPointCloud):
        return ColoredPointCloud(out, cloud.colors.copy(), cloud.space), center, scale
    return PointCloud(out), center, scale


def denormalize(cloud, center, scale):
    pos = cloud.positions * scale + np.asarray(center)
    if isinstance(cloud, ColoredPointCloud):
        return ColoredPointCloud(pos, cloud.colors.copy(), cloud.space)
    return PointCloud(pos)


def subsample(cloud, n, rng):
    """At most ``n`` points, drawn without replacement."""
    if len(cloud) <= n:
        return cloud
    idx = rng.choice(len(cloud), size=n, replace=False)
    if isinstance(cloud, ColoredPointCloud):
        return ColoredPointCloud(cloud.positions[idx], cloud.colors[idx], cloud.space)
    return PointCloud(cloud.positions[idx])


# --- synthetic shapes -------------------------------------------------------

RED = (1.0, 0.0, 0.0)
BLUE = (0.0, 0.0, 1.0)


def _sample_box_surfaces(boxes, n, rng):
    """Area-weighted uniform samples over the faces of axis-aligned boxes."""
    faces = []
    for lo, hi in boxes:
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            area = (hi[others[0]] - lo[others[0]]) * (hi[others[1]] - lo[others[1]])
            for side in (lo[axis], hi[axis]):
                faces.append((axis, side, lo, hi, area))
    areas = np.array([f[4] for f in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    u = rng.random((n, 3))
    for i, fi in enumerate(choice):
        axis, side, lo, hi, _ = faces[fi]
        p = lo + u[i] * (hi - lo)
        p[axis] = side
        pts[i] = p
    return pts


def _chair_boxes(rng, jitter):
    def j(v):
        return v * (1.0 + jitter * (rng.random() * 2 - 1)) if jitter else v

    w, d = j(0.5), j(0.5)
    seat_t = 0.08
    back_h = j(0.9)
    leg_h = j(0.8)
    leg = 0.07
    boxes = [((-w, -d, -seat_t), (w, d, seat_t)),
             ((-w, d - 0.1, seat_t), (w, d, seat_t + back_h))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            x0 = sx * (w - leg)
            y0 = sy * (d - leg)
            boxes.append(((x0 - leg, y0 - leg, -seat_t - leg_h), (x0 + leg, y0 + leg, -seat_t)))
    return boxes


def make_synthetic(kind, n, rng, palette=None, jitter=0.0):
    """Colored primitive clouds for desk-scale experiments.

    ``cube``: surface of [-1, 1]^3, ``sphere``: unit sphere,
    ``two_tone_chairlike``: seat, back and four legs. Cube and chair are two
    tone, ``palette[0]`` where z > 0 and ``palette[1]`` where z <= 0; the
    sphere takes ``palette[0]`` everywhere. ``jitter`` randomizes chair
    proportions.
    """
    if n < 8:
        raise ValueError("need at least 8 points")
    top, bottom = (palette if palette is not None else (RED, BLUE))
    if kind == "cube":
        pts = _sample_box_surfaces([((-1, -1, -1), (1, 1, 1))], n, rng)
    elif kind == "sphere":
        g = rng.standard_normal((n, 3))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
        return ColoredPointCloud(pts, np.tile(np.asarray(top, float), (n, 1)), "rgb_unit")
    elif kind == "two_tone_chairlike":
        pts = _sample_box_surfaces(_chair_boxes(rng, jitter), n, rng)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    colors = np.where(pts[:, 2:3] > 0, np.asarray(top, float), np.asarray(bottom, float))
    return ColoredPointCloud(pts, colors, "rgb_unit")


# --- datasets ---------------------------------------------------------------


@dataclass
class DatasetObject:
    object_id: str
    label: str
    split: str
    path: str
    cloud: object
    center: np.ndarray
    scale: float


@dataclass
class DatasetManifest:
    entries: list
    root: Path = Path(".")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: manifest is not valid JSON: {exc}") from None
        entries = doc.get("objects") if isinstance(doc, dict) else None
        if not isinstance(entries, list):
            raise FormatError(f"{path}: manifest needs an 'objects' list")
        seen = set()
        for i, e in enumerate(entries):
            for key in ("object_id", "path"):
                if key not in e:
                    raise FormatError(f"{path}: manifest object {i} lacks {key!r}")
            if e["object_id"] in seen:
                raise FormatError(f"{path}: duplicate object_id {e['object_id']!r}")
            seen.add(e["object_id"])
            e.setdefault("label", "")
            e.setdefault("split", "train")
        return cls(entries, path.parent)

    def save(self, path):
        doc = {"objects": self.entries}
        atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())

    def select(self, split=None):
        return [e for e in self.entries if split is None or e["split"] == split]

    def load_objects(self, split=None):
        """Load and normalize every object (optionally one split), ordered by object_id."""
        out = []
        for e in sorted(self.select(split), key=lambda e: e["object_id"]):
            p = Path(e["path"])
            if not p.is_absolute():
                p = self.root / p
            if not p.exists():
                raise FileNotFoundError(f"manifest object {e['object_id']!r}: no such file {p}")
            cloud, center, scale = normalize_unit_ball(load_cloud(p))
            e["normalization"] = {"center": center.tolist(), "scale": scale}
            out.append(DatasetObject(e["object_id"], e["label"], e["split"], str(p), cloud, center, scale))
        return out


def write_synthetic_dataset(outdir, count, n, seed, kinds=("two_tone_chairlike",), test_fraction=0.0):
    """Generate ``count`` colored PLY clouds and a manifest; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    n_test = int(round(count * test_fraction))
    for i in range(count):
        kind = kinds[i % len(kinds)]
        palette = (tuple(rng.random(3)), tuple(rng.random(3)))
        cloud = make_synthetic(kind, n, rng, palette=palette, jitter=0.3)
        name = f"obj_{i:03d}"
        save_cloud(cloud, outdir / f"{name}.ply")
        entries.append({"object_id": name, "path": f"{name}.ply", "label": kind,
                        "split": "test" if i >= count - n_test else "train"})
    manifest = outdir / "manifest.json"
    DatasetManifest(entries, outdir).save(manifest)
    return manifest
