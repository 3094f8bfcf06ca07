"""sRGB <-> CIELAB (D65) conversion.

Tags:

``rgb_unit``  sRGB in [0, 1]
``rgb_255``   sRGB in [0, 255]
``lab``       CIELAB, L in [0, 100], a and b in [-128, 127]
``lab_unit``  CIELAB rescaled to [0, 1] as (L / 100, (a + 128) / 255, (b + 128) / 255)
"""
import warnings

import numpy as np

TAGS = ("rgb_unit", "rgb_255", "lab", "lab_unit")

# D65 reference white, CIE 1931 2-degree observer
WHITE = np.array([0.95047, 1.0, 1.08883])
RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

_DELTA = 6.0 / 29.0
_RANGES = {
    "rgb_unit": (np.zeros(3), np.ones(3)),
    "rgb_255": (np.zeros(3), np.full(3, 255.0)),
    "lab": (np.array([0.0, -128.0, -128.0]), np.array([100.0, 127.0, 127.0])),
    "lab_unit": (np.zeros(3), np.ones(3)),
}


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb):
    xyz = _srgb_to_linear(rgb) @ RGB_TO_XYZ.T
    f = _f(xyz / WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab):
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _f_inv(np.stack([fx, fy, fz], axis=-1)) * WHITE
    return _linear_to_srgb(xyz @ XYZ_TO_RGB.T)


def lab_to_unit(lab):
    return np.stack([lab[..., 0] / 100.0, (lab[..., 1] + 128.0) / 255.0, (lab[..., 2] + 128.0) / 255.0], axis=-1)


def unit_to_lab(u):
    return np.stack([u[..., 0] * 100.0, u[..., 1] * 255.0 - 128.0, u[..., 2] * 255.0 - 128.0], axis=-1)


def _clamp(colors, tag):
    lo, hi = _RANGES[tag]
    clipped = np.clip(colors, lo, hi)
    return clipped, bool(np.any(clipped != colors))


def rgb_lab_convert(colors, src, dst, return_flag=False):
    """Convert an ``(..., 3)`` color array between tags.

    Inputs outside the source range are clamped; so are out-of-gamut sRGB
    results. Either event emits a ``RuntimeWarning`` (and sets the returned
    flag when ``return_flag`` is true).
    """
    for tag in (src, dst):
        if tag not in TAGS:
            raise ValueError(f"unknown color space {tag!r}; choose from {TAGS}")
    colors = np.asarray(colors, dtype=np.float64)
    colors, flagged = _clamp(colors, src)
    if src == dst:
        out = colors.copy()
    else:
        if src == "rgb_255":
            rgb = colors / 255.0
        elif src == "rgb_unit":
            rgb = colors
        else:
            rgb = None
            lab = colors if src == "lab" else unit_to_lab(colors)
        if dst in ("lab", "lab_unit"):
            if rgb is not None:
                lab = rgb_to_lab(rgb)
            out = lab if dst == "lab" else lab_to_unit(lab)
        else:
            if rgb is None:
                rgb, gamut = _clamp(lab_to_rgb(lab), "rgb_unit")
                flagged = flagged or gamut
            out = rgb * 255.0 if dst == "rgb_255" else rgb.copy()
    if flagged:
        warnings.warn(f"colors clamped while converting {src} -> {dst}", RuntimeWarning, stacklevel=2)
    return (out, flagged) if return_flag else out


def quiet_convert(colors, src, dst):
    """Like :func:`rgb_lab_convert` but silently clamps (network outputs drift out of gamut)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return rgb_lab_convert(colors, src, dst)
