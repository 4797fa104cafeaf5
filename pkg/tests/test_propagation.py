import numpy as np
import pytest

from depthprompt.errors import ContractError, DataError
from depthprompt.propagation import (AffinityField, PropagationConfig, normalize_affinity, propagate,
                                     propagate_history, propagate_reference, read_affinity,
                                     write_affinity)

BACKENDS = ["numba", "numpy"]


def one_hot_center(c, h, w):
    wts = np.zeros((c * c, h, w))
    wts[c * c // 2] = 1.0
    return AffinityField(wts)


def random_case(rng, c=None, max_side=12, seed_frac=0.1):
    c = c or int(rng.choice([3, 5, 7]))
    h, w = rng.integers(1, max_side + 1, size=2)
    init = rng.uniform(0.5, 10.0, (h, w))
    seeds = np.where(rng.random((h, w)) < seed_frac, rng.uniform(0.5, 10.0, (h, w)), 0.0)
    aff = normalize_affinity(AffinityField(rng.normal(size=(c * c, h, w))))
    return init, seeds, aff


# ------------------------------------------------------------ normalization


def test_normalize_fixed_point_and_symmetry():
    f = one_hot_center(3, 4, 5)
    np.testing.assert_array_equal(normalize_affinity(f).weights, f.weights)
    ones = normalize_affinity(AffinityField(np.ones((9, 2, 2))))
    np.testing.assert_allclose(ones.weights, 1 / 9, rtol=0, atol=1e-16)


def test_normalize_zero_pixel_becomes_identity():
    raw = np.random.default_rng(0).normal(size=(9, 3, 3))
    raw[:, 1, 1] = 0.0
    out = normalize_affinity(AffinityField(raw)).weights
    assert out[4, 1, 1] == 1.0 and out[:, 1, 1].sum() == 1.0


def test_normalize_sums_random_fields():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        c = int(rng.choice([3, 5, 7]))
        raw = AffinityField(rng.normal(scale=rng.uniform(1e-3, 1e3), size=(c * c, 3, 4)))
        w = normalize_affinity(raw).weights
        assert np.all(w >= 0)
        assert np.max(np.abs(w.sum(axis=0) - 1)) <= 1e-6


def test_normalize_rejects_nonfinite():
    raw = np.ones((9, 2, 2))
    raw[0, 0, 0] = np.inf
    with pytest.raises(DataError):
        normalize_affinity(AffinityField(raw))


def test_affinity_shape_contract():
    with pytest.raises(ContractError):
        AffinityField(np.ones((16, 2, 2)))  # even stencil
    with pytest.raises(ContractError):
        AffinityField(np.ones((10, 2, 2)))


def test_affinity_file_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    f = AffinityField(rng.random((49, 4, 6)).astype(np.float32))
    write_affinity(f, tmp_path / "a.dpr")
    back = read_affinity(tmp_path / "a.dpr")
    assert back.stencil_size == 7
    np.testing.assert_array_equal(back.weights, f.weights)


# -------------------------------------------------------------- propagation


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity_affinity(backend):
    rng = np.random.default_rng(3)
    init = rng.uniform(1, 5, (5, 6))
    seeds = np.zeros_like(init)
    seeds[2, 3] = 9.0
    aff = one_hot_center(7, 5, 6)
    out = propagate(init, np.zeros_like(init), aff, PropagationConfig(4, False), backend=backend).values
    np.testing.assert_array_equal(out, init)
    out = propagate(init, seeds, aff, PropagationConfig(4, True), backend=backend).values
    expected = init.copy()
    expected[2, 3] = 9.0
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_steps_is_identity(backend):
    init, seeds, aff = random_case(np.random.default_rng(4))
    out = propagate(init, seeds, aff, PropagationConfig(0, False), backend=backend).values
    np.testing.assert_array_equal(out, init)


@pytest.mark.parametrize("backend", BACKENDS)
def test_constant_fixed_point(backend):
    aff = normalize_affinity(AffinityField(np.ones((9, 3, 3))))
    out = propagate(np.full((3, 3), 2.0), np.zeros((3, 3)), aff, PropagationConfig(6, False), backend=backend)
    np.testing.assert_allclose(out.values, 2.0, rtol=1e-15)


def _row_stencil():
    # C=3 on a 1x3 raster: center and the two in-row neighbours at 1/3, other offsets 0
    w = np.zeros((9, 1, 3))
    w[4] = w[3] = w[5] = 1 / 3
    return AffinityField(w)


@pytest.mark.parametrize("backend", BACKENDS)
def test_hand_evaluated_steps(backend):
    init = np.array([[0.0, 3.0, 0.0]])
    seeds = np.zeros_like(init)
    aff = _row_stencil()
    # step 1 (clamped left edge reads pixel 0 itself):
    #   x0 = (0 + 0 + 3)/3 = 1, x1 = (3 + 0 + 0)/3 = 1, x2 = (0 + 3 + 0)/3 = 1
    one = propagate(init, seeds, aff, PropagationConfig(1, False), backend=backend).values
    np.testing.assert_allclose(one, [[1.0, 1.0, 1.0]], rtol=0, atol=1e-15)
    # step 2: x0 = (0 + 1 + 1)/3, x1 = (3 + 1 + 1)/3, x2 = (0 + 1 + 1)/3
    two = propagate(init, seeds, aff, PropagationConfig(2, False), backend=backend).values
    np.testing.assert_allclose(two, [[2 / 3, 5 / 3, 2 / 3]], rtol=0, atol=1e-15)


def test_backends_match_reference_bitwise():
    rng = np.random.default_rng(5)
    for _ in range(100):
        init, seeds, aff = random_case(rng, max_side=9)
        cfg = PropagationConfig(int(rng.integers(0, 7)), bool(rng.integers(2)))
        ref = propagate_reference(init, seeds, aff, cfg).values
        for backend in BACKENDS:
            assert propagate(init, seeds, aff, cfg, backend=backend).values.tobytes() == ref.tobytes()


def test_seed_preservation():
    rng = np.random.default_rng(6)
    for _ in range(20):
        init, seeds, aff = random_case(rng, seed_frac=0.3)
        out = propagate(init, seeds, aff, PropagationConfig(5, True)).values
        v = seeds > 0
        np.testing.assert_array_equal(out[v], seeds[v])


def test_convexity_bounds_per_step():
    rng = np.random.default_rng(7)
    for _ in range(30):
        init, seeds, aff = random_case(rng)
        hist = propagate_history(init, seeds, aff, PropagationConfig(6, False))
        r = aff.radius
        for prev, cur in zip(hist, hist[1:]):
            pad = np.pad(prev, r, mode="edge")
            h, w = prev.shape
            wins = np.stack([pad[dy:dy + h, dx:dx + w] for dy in range(2 * r + 1) for dx in range(2 * r + 1)])
            lo = np.minimum(wins.min(0), init)
            hi = np.maximum(wins.max(0), init)
            tol = 1e-12 * hi
            assert np.all(cur >= lo - tol) and np.all(cur <= hi + tol)
            assert cur.min() >= init.min() - 1e-12 and cur.max() <= init.max() + 1e-12


def test_transpose_equivariance():
    rng = np.random.default_rng(8)
    for _ in range(20):
        init, seeds, aff = random_case(rng)
        cfg = PropagationConfig(4, True)
        out = propagate(init, seeds, aff, cfg).values
        out_t = propagate(init.T, seeds.T, aff.transpose(), cfg).values
        np.testing.assert_allclose(out_t, out.T, rtol=1e-12)


def test_shape_mismatch():
    aff = one_hot_center(3, 4, 4)
    with pytest.raises(ContractError):
        propagate(np.ones((4, 5)), np.zeros((4, 5)), aff)
    with pytest.raises(ContractError):
        propagate(np.ones((4, 4)), np.zeros((4, 5)), aff)


def test_env_flag_selects_numpy(monkeypatch):
    from depthprompt import _accel

    monkeypatch.setenv("DEPTHPROMPT_DISABLE_NUMBA", "1")
    assert _accel.resolve_backend(None) == "numpy"
    monkeypatch.setenv("DEPTHPROMPT_DISABLE_NUMBA", "0")
    assert _accel.resolve_backend(None) == ("numba" if _accel.HAVE_NUMBA else "numpy")
    with pytest.raises(ValueError):
        _accel.resolve_backend("cuda")
