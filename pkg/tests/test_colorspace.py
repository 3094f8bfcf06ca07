import numpy as np
import pytest

from hypercolor.colorspace import lab_to_unit, quiet_convert, rgb_lab_convert, unit_to_lab


def test_white_and_black():
    lab = rgb_lab_convert([1.0, 1.0, 1.0], "rgb_unit", "lab")
    np.testing.assert_allclose(lab, [100.0, 0.0, 0.0], atol=0.01)
    assert abs(rgb_lab_convert([0.0, 0.0, 0.0], "rgb_unit", "lab")[0]) < 1e-12


def test_mid_grey_reference():
    # sRGB 119/255 is a standard L* ~ 50 grey
    lab = rgb_lab_convert([119, 119, 119], "rgb_255", "lab")
    assert abs(lab[0] - 50.0) < 0.1 and np.all(np.abs(lab[1:]) < 1e-3)


def test_round_trip_ten_thousand_colors():
    rgb = np.random.default_rng(0).random((10_000, 3))
    for mid in ("lab", "lab_unit"):
        back = rgb_lab_convert(rgb_lab_convert(rgb, "rgb_unit", mid), mid, "rgb_unit")
        assert np.abs(back - rgb).max() <= 1 / 255


def test_rgb255_scale():
    out = rgb_lab_convert([[255, 0, 51]], "rgb_255", "rgb_unit")
    np.testing.assert_allclose(out, [[1.0, 0.0, 0.2]])


def test_lab_unit_scaling():
    lab = np.array([[100.0, -128.0, 127.0], [0.0, 0.0, 0.0]])
    u = lab_to_unit(lab)
    np.testing.assert_allclose(u, [[1.0, 0.0, 1.0], [0.0, 128 / 255, 128 / 255]])
    np.testing.assert_allclose(unit_to_lab(u), lab)


def test_out_of_range_clamped_and_flagged():
    with pytest.warns(RuntimeWarning):
        out, flag = rgb_lab_convert([[1.5, -0.2, 0.5]], "rgb_unit", "lab", return_flag=True)
    assert flag
    np.testing.assert_allclose(out, rgb_lab_convert([[1.0, 0.0, 0.5]], "rgb_unit", "lab"))
    _, flag = rgb_lab_convert([[0.2, 0.3, 0.4]], "rgb_unit", "lab", return_flag=True)
    assert not flag


def test_out_of_gamut_lab_flagged():
    with pytest.warns(RuntimeWarning):
        out, flag = rgb_lab_convert([[50.0, 120.0, -120.0]], "lab", "rgb_unit", return_flag=True)
    assert flag and out.min() >= 0 and out.max() <= 1


def test_quiet_convert_is_silent(recwarn):
    quiet_convert([[2.0, 0.0, 0.0]], "rgb_unit", "lab")
    assert not [w for w in recwarn if issubclass(w.category, RuntimeWarning)]


def test_unknown_tag():
    with pytest.raises(ValueError, match="hsv"):
        rgb_lab_convert([0, 0, 0], "rgb_unit", "hsv")
