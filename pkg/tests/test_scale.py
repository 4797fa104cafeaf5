import numpy as np
import pytest

from depthprompt.errors import DegenerateSupportError, NoSupportError
from depthprompt.scale import ScaleFit, apply_scale, fit_scale, fit_scale_or_unit


def grid_argmin(d, s, lo, hi, n=20001):
    ps = np.linspace(lo, hi, n)
    res = np.linalg.norm(ps[:, None] * d[None] - s[None], axis=1)
    return ps[np.argmin(res)], res.min()


def test_identity_fit():
    rel = np.array([[1.0, 2.0], [3.0, 4.0]])
    fit = fit_scale(rel, rel)
    assert fit.p_hat == 1.0 and fit.residual_norm == 0.0 and fit.n_support == 4


def test_exact_double():
    rel = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert fit_scale(rel, 2 * rel).p_hat == 2.0


def test_two_point_fixture_against_grid_search():
    rel = np.array([[1.0, 2.0]])
    sparse = np.array([[2.0, 2.0]])
    fit = fit_scale(rel, sparse)
    assert fit.p_hat == pytest.approx(1.2, abs=1e-15)
    p_grid, _ = grid_argmin(rel.ravel(), sparse.ravel(), 0.0, 3.0)
    assert abs(p_grid - 1.2) < 2e-4
    assert fit.residual_norm == pytest.approx(np.linalg.norm(1.2 * rel - sparse))


def test_apply_scale():
    np.testing.assert_array_equal(apply_scale(np.array([[1.0, 3.0]]), 2.0).values, [[2.0, 6.0]])
    rel = np.array([[1.5, 0.0]])
    np.testing.assert_array_equal(apply_scale(rel, ScaleFit(1.0, 1, 0.0)).values, rel)


def test_fit_then_apply_on_exact_pair():
    rng = np.random.default_rng(0)
    rel = rng.uniform(0.2, 3.0, (10, 10))
    sparse = np.where(rng.random(rel.shape) < 0.2, 3.7 * rel, 0.0)
    out = apply_scale(rel, fit_scale(rel, sparse)).values
    v = sparse > 0
    np.testing.assert_allclose(out[v], sparse[v], rtol=0, atol=1e-12)


def test_errors_and_fallback():
    rel = np.ones((3, 3))
    with pytest.raises(NoSupportError):
        fit_scale(rel, np.zeros((3, 3)))
    tiny = np.full((3, 3), 1e-200)
    with pytest.raises(DegenerateSupportError):
        fit_scale(tiny, np.ones((3, 3)))
    fb = fit_scale_or_unit(rel, np.zeros((3, 3)))
    assert fb.p_hat == 1.0 and fb.n_support == 0


def _instance(rng):
    h, w = rng.integers(2, 12, size=2)
    rel = rng.uniform(0.05, 5.0, (h, w))
    sparse = np.where(rng.random((h, w)) < 0.4, rng.uniform(0.1, 10.0, (h, w)), 0.0)
    sparse.flat[0] = rng.uniform(0.1, 10.0)
    return rel, sparse


def test_scale_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rel, sparse = _instance(rng)
        alpha = rng.uniform(0.01, 100.0)
        p = fit_scale(rel, sparse).p_hat
        assert fit_scale(rel, alpha * sparse).p_hat == pytest.approx(alpha * p, rel=1e-12)


def test_residual_orthogonality_and_optimality():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        rel, sparse = _instance(rng)
        fit = fit_scale(rel, sparse)
        v = sparse > 0
        d, s = rel[v], sparse[v]
        assert abs(np.dot(d, fit.p_hat * d - s)) <= 1e-9 * np.linalg.norm(d) * np.linalg.norm(s)
        ps = np.linspace(fit.p_hat / 2, 2 * fit.p_hat, 101)
        grid = np.linalg.norm(ps[:, None] * d[None] - s[None], axis=1)
        assert fit.residual_norm <= grid.min() + 1e-12


def test_co_invalid_pixels_do_not_matter():
    rng = np.random.default_rng(3)
    rel, sparse = _instance(rng)
    base = fit_scale(rel, sparse)
    rel2 = np.pad(rel, 2, constant_values=0.0)
    sparse2 = np.pad(sparse, 2, constant_values=0.0)
    rel2[0, :] = 7.0  # relative valid but no measurement there
    assert fit_scale(rel2, sparse2) == base
