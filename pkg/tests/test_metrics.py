import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypercolor import metrics
from hypercolor.clouds import ColoredPointCloud


def chamfer_oracle(a, b):
    total = 0.0
    for x in a:
        total += min(float(np.sum((x - y) ** 2)) for y in b)
    for y in b:
        total += min(float(np.sum((x - y) ** 2)) for x in a)
    return total


def emd_brute(a, b):
    n = len(a)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        c = sum(0.5 * float(np.sum((a[i] - b[j]) ** 2)) for i, j in enumerate(perm))
        best = min(best, c)
    return best


def test_chamfer_hand_cases():
    a = np.zeros((1, 3))
    assert metrics.chamfer(a, [[1.0, 0.0, 0.0]]) == 2.0
    x = np.random.default_rng(0).standard_normal((20, 3))
    assert metrics.chamfer(x, x) == 0.0


def test_chamfer_rejects_empty_and_wrong_dimension():
    with pytest.raises(ValueError):
        metrics.chamfer(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics.chamfer(np.zeros((2, 2)), np.zeros((2, 2)))


def test_chamfer_random_50_matches_oracle(rng):
    a, b = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    assert abs(metrics.chamfer(a, b) - chamfer_oracle(a, b)) < 1e-12


@pytest.mark.parametrize("n,m", [(257, 300), (600, 1000), (1000, 1000), (10, 1000)])
def test_chamfer_indexed_equals_exhaustive(n, m, rng):
    a, b = rng.standard_normal((n, 3)), rng.standard_normal((m, 3))
    fast = metrics.chamfer(a, b)
    brute = metrics.chamfer(a, b, use_index=False)
    indexed = metrics.chamfer(a, b, use_index=True)
    assert abs(fast - brute) <= 1e-12 * max(1.0, brute)
    assert abs(indexed - brute) <= 1e-12 * max(1.0, brute)


def test_nearest_ties_go_to_lowest_index():
    ref = np.array([[1.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
    for use_index in (False, True):
        idx, d2 = metrics.nearest(np.zeros((1, 3)), ref, use_index)
        assert idx[0] == 0 and d2[0] == 1.0


def test_chamfer_with_grad_matches_finite_differences(rng):
    recon, target = rng.standard_normal((12, 6)), rng.standard_normal((15, 6))
    value, grad = metrics.chamfer_with_grad(recon, target)
    num = np.zeros_like(recon)
    eps = 1e-6
    for i in range(recon.shape[0]):
        for j in range(recon.shape[1]):
            p, m = recon.copy(), recon.copy()
            p[i, j] += eps
            m[i, j] -= eps
            num[i, j] = (metrics.chamfer_with_grad(p, target)[0] - metrics.chamfer_with_grad(m, target)[0]) / (2 * eps)
    np.testing.assert_allclose(grad, num, atol=1e-6)
    assert value == pytest.approx(chamfer_oracle(recon, target), abs=1e-12)


def test_emd_hand_case_exact():
    a = [[0.0, 0, 0], [2.0, 0, 0]]
    b = [[1.0, 0, 0], [3.0, 0, 0]]
    res = metrics.emd_exact(a, b)
    assert res.cost == 1.0
    assert list(res.mapping) == [0, 1]
    c = metrics.emd_cost_matrix(np.array(a), np.array(b))
    assert c[0, 1] + c[1, 0] == 5.0


def test_emd_identical_clouds_identity_among_duplicates():
    a = np.array([[0.0, 0, 0]] * 4 + [[1.0, 1, 1]] * 3)
    res = metrics.emd_exact(a, a.copy())
    assert res.cost == 0.0
    np.testing.assert_array_equal(res.mapping, np.arange(7))


def test_emd_random_7_matches_permutation_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        a, b = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        res = metrics.emd_exact(a, b)
        assert sorted(res.mapping) == list(range(n))
        assert abs(res.cost - emd_brute(a, b)) < 1e-12


def test_emd_errors():
    with pytest.raises(ValueError, match="equally sized"):
        metrics.emd_exact(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError, match="subsample"):
        metrics.emd_exact(np.zeros((5, 3)), np.zeros((5, 3)), cap=4)


def test_emd_mapping_cost_is_sum_of_pair_costs(rng):
    a, b = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
    res = metrics.emd_exact(a, b)
    pair = 0.5 * np.sum((a - b[res.mapping]) ** 2, axis=1)
    assert res.cost == pytest.approx(pair.sum(), rel=1e-14)
    assert res.cost <= 0.5 * np.sum((a - b) ** 2) + 1e-12


def test_emd_agrees_with_scipy_assignment(rng):
    scipy_opt = pytest.importorskip("scipy.optimize")
    a, b = rng.standard_normal((120, 3)), rng.standard_normal((120, 3))
    c = metrics.emd_cost_matrix(a, b)
    r, col = scipy_opt.linear_sum_assignment(c)
    assert metrics.emd(a, b) == pytest.approx(c[r, col].sum(), rel=1e-12)


small_sets = st.integers(1, 6).flatmap(
    lambda n: st.tuples(*[arrays(np.float64, (n, 3), elements=st.floats(-3, 3, width=32))] * 3))


@settings(max_examples=40, deadline=None)
@given(small_sets)
def test_emd_metric_sanity(sets):
    a, b, c = sets
    ab, ba = metrics.emd(a, b), metrics.emd(b, a)
    assert ab >= 0
    assert metrics.emd(a, a) == 0
    assert ab == pytest.approx(emd_brute(a, b), abs=1e-9)
    assert ab == pytest.approx(ba, abs=1e-9)
    # 0.5 |x - y|^2 is not a metric; its square root obeys the triangle inequality
    assert np.sqrt(metrics.emd(a, c)) <= np.sqrt(ab) + np.sqrt(metrics.emd(b, c)) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_chamfer_symmetric_and_nonnegative(n, m, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((n, 3)), r.standard_normal((m, 3))
    assert metrics.chamfer(a, b) == metrics.chamfer(b, a)
    assert metrics.chamfer(a, b) >= 0
    assert metrics.chamfer(a, a) == 0


def test_color_mse_cases(rng):
    assert metrics.color_mse(np.zeros((1, 3)), [[3.0, 0, 0]]) == 3.0
    x = rng.random((100, 3))
    assert metrics.color_mse(x, x) == 0.0
    y = rng.random((100, 3))
    loop = sum((x[i, j] - y[i, j]) ** 2 for i in range(100) for j in range(3)) / 300
    assert abs(metrics.color_mse(x, y) - loop) < 1e-12
    with pytest.raises(ValueError):
        metrics.color_mse(x, y[:5])


def test_knn_align_identity_and_tie(rng):
    pos = rng.standard_normal((30, 3))
    cols = rng.random((30, 3))
    cloud = ColoredPointCloud(pos, cols)
    np.testing.assert_array_equal(metrics.knn_align(pos, cloud, 1), cols)
    tie = ColoredPointCloud([[1.0, 0, 0], [-1.0, 0, 0]], [[1.0, 0, 0], [0, 0, 1.0]])
    np.testing.assert_array_equal(metrics.knn_align(np.zeros((1, 3)), tie, 1), [[1.0, 0, 0]])


@pytest.mark.parametrize("m", [64, 300])
def test_knn_align_k3_matches_sort_oracle(m, rng):
    pos = rng.standard_normal((m, 3))
    cols = rng.random((m, 3))
    q = rng.standard_normal((m, 3))
    got = metrics.knn_align(q, ColoredPointCloud(pos, cols), 3)
    want = np.empty_like(got)
    for i in range(m):
        d = [(float(np.sum((q[i] - p) ** 2)), j) for j, p in enumerate(pos)]
        d.sort()
        want[i] = cols[[j for _, j in d[:3]]].mean(axis=0)
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_knn_align_subset_of_colors_and_errors(rng):
    cloud = ColoredPointCloud(rng.standard_normal((20, 3)), rng.random((20, 3)))
    got = metrics.knn_align(rng.standard_normal((50, 3)), cloud, 1)
    palette = {tuple(c) for c in cloud.colors}
    assert all(tuple(c) in palette for c in got)
    with pytest.raises(ValueError):
        metrics.knn_align(rng.standard_normal((5, 3)), cloud, 21)
    with pytest.raises(ValueError):
        metrics.knn_align(np.zeros((0, 3)), cloud, 1)
