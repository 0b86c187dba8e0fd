import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sph_harm_y

from probnerf.autodiff import Tensor, grad_check
from probnerf.encoding import HashGrid, HashGridConfig, hash_encode, sh_encode

SMALL = HashGridConfig(levels=3, base_resolution=2, growth=2.0, table_size=2 ** 10, features=2)


def grid_with_random_tables(cfg=SMALL, seed=0):
    grid = HashGrid(cfg, np.random.default_rng(seed))
    for t in grid.tables:
        t.data[:] = np.random.default_rng(seed + 1).standard_normal(t.shape)
    return grid


def oracle_hash(ix, iy, iz, t):
    return ((ix * 1) ^ (iy * 2654435761) ^ (iz * 805459861)) % (2 ** 64) & (t - 1)


def oracle_encode(grid, p):
    """Straight-line trilinear interpolation with Python integers."""
    out = []
    for res, table in zip(grid.config.resolutions, grid.tables):
        pos = [c * res for c in p]
        base = [math.floor(c) for c in pos]
        frac = [c - b for c, b in zip(pos, base)]
        acc = np.zeros(grid.config.features)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((frac[0] if dx else 1 - frac[0]) * (frac[1] if dy else 1 - frac[1])
                         * (frac[2] if dz else 1 - frac[2]))
                    idx = oracle_hash(base[0] + dx, base[1] + dy, base[2] + dz,
                                      grid.config.table_size)
                    acc += w * table.data[idx]
        out.append(acc)
    return np.concatenate(out)


def test_default_config_levels():
    cfg = HashGridConfig()
    assert cfg.resolutions == [4, 6, 9, 13, 20, 30, 45, 68]
    assert cfg.out_dim == 16


def test_config_validation():
    with pytest.raises(ValueError):
        HashGridConfig(table_size=1000)
    with pytest.raises(ValueError):
        HashGridConfig(levels=0)
    with pytest.raises(ValueError):
        HashGridConfig(levels=3, base_resolution=2, growth=1.1)


def test_table_initialisation_range():
    grid = HashGrid(HashGridConfig(), np.random.default_rng(0))
    for t in grid.tables:
        assert t.shape == (2 ** 14, 2)
        assert np.abs(t.data).max() <= 1e-4


def test_vertex_returns_table_row():
    grid = grid_with_random_tables()
    x = np.array([[0.5, 0.0, 1.0]])  # a vertex at every level resolution (2, 4, 8)
    feat = hash_encode(grid, x).data[0]
    for l, res in enumerate(grid.config.resolutions):
        idx = oracle_hash(res // 2, 0, res, 2 ** 10)
        assert np.array_equal(feat[2 * l:2 * l + 2], grid.tables[l].data[idx])


def test_cell_center_is_corner_mean():
    grid = grid_with_random_tables()
    res = grid.config.resolutions[0]
    x = np.array([[0.5 / res, 1.5 / res, 0.5 / res]])
    rows = [grid.tables[0].data[oracle_hash(dx, 1 + dy, dz, 2 ** 10)]
            for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
    assert np.allclose(hash_encode(grid, x).data[0, :2], np.mean(rows, axis=0), atol=1e-15)


def test_matches_brute_force_oracle():
    grid = grid_with_random_tables(HashGridConfig(table_size=2 ** 8))
    pts = np.random.default_rng(3).uniform(0, 1, (50, 3))
    enc = hash_encode(grid, pts).data
    for p, e in zip(pts, enc):
        assert np.allclose(e, oracle_encode(grid, p), atol=1e-12)


def test_out_of_cube_is_clamped_and_counted():
    grid = grid_with_random_tables()
    before = grid.clamp_count
    a = hash_encode(grid, np.array([[1.2, -0.1, 0.5]])).data
    b = hash_encode(grid, np.array([[1.0, 0.0, 0.5]])).data
    assert grid.clamp_count == before + 1
    assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_continuous_across_cell_boundaries(k, axis, u, v):
    grid = grid_with_random_tables()
    x = np.array([u, v, u])
    x[axis] = k / 8.0  # a cell face at the finest level (resolution 8)
    lo, hi = x.copy(), x.copy()
    lo[axis] -= 1e-7
    hi[axis] += 1e-7
    diff = hash_encode(grid, np.stack([lo, hi])).data
    assert np.abs(diff[0] - diff[1]).max() < 1e-5


def test_table_gradients_match_finite_differences():
    grid = grid_with_random_tables()
    x = np.random.default_rng(4).uniform(0, 1, (6, 3))
    probe = np.random.default_rng(5).standard_normal((6, grid.config.out_dim))
    for table in grid.tables:
        err = grad_check(lambda _: (hash_encode(grid, x) * probe).sum(), table,
                         coords=_touched_rows(grid, x, table))
        assert err < 1e-4


def _touched_rows(grid, x, table):
    from probnerf.encoding import _cell

    l = next(i for i, t in enumerate(grid.tables) if t is table)
    idx, _ = _cell(x, grid.config.resolutions[l], grid.config.table_size)
    rows = np.unique(idx.ravel())
    f = grid.config.features
    return [r * f + k for r in rows for k in range(f)]


def test_position_gradient_matches_finite_differences():
    grid = grid_with_random_tables()
    x = Tensor(np.random.default_rng(6).uniform(0.05, 0.95, (5, 3)))
    probe = np.random.default_rng(7).standard_normal((5, grid.config.out_dim))
    assert grad_check(lambda t: (hash_encode(grid, t) * probe).sum(), x, eps=1e-6) < 1e-4


# ---------------------------------------------------------------- spherical harmonics

def scipy_real_sh(d, degree):
    """Real SH in the graphics sign convention built from scipy's complex harmonics."""
    x, y, z = d
    theta = math.atan2(y, x)
    phi = math.acos(max(-1.0, min(1.0, z)))
    out = []
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            y_lm = sph_harm_y(l, abs(m), phi, theta)
            if m > 0:
                out.append(math.sqrt(2) * y_lm.real)
            elif m < 0:
                out.append(math.sqrt(2) * y_lm.imag)
            else:
                out.append(y_lm.real)
    return np.array(out)


def test_degree_zero_constant():
    assert sh_encode(np.array([0.6, 0.0, 0.8]), 0)[0] == pytest.approx(0.2820948, abs=1e-7)


def test_z_axis_degree_one():
    v = sh_encode(np.array([0.0, 0.0, 1.0]), 1)
    assert v[1] == 0 and v[3] == 0
    assert v[2] == pytest.approx(math.sqrt(3 / (4 * math.pi)), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_matches_scipy_closed_forms(seed):
    d = np.random.default_rng(seed).standard_normal(3)
    d /= np.linalg.norm(d)
    assert np.allclose(sh_encode(d, 3), scipy_real_sh(d, 3), atol=1e-12)


def test_output_length():
    for deg in range(4):
        assert sh_encode(np.array([1.0, 0, 0]), deg).shape == ((deg + 1) ** 2,)


def test_rejects_non_unit_and_high_degree():
    with pytest.raises(ValueError):
        sh_encode(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        sh_encode(np.array([1.0, 0.0, 0.0]), 4)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_negation_flips_odd_degrees(a, b, c):
    d = np.array([a, b, c])
    n = np.linalg.norm(d)
    if n < 1e-3:
        return
    d /= n
    pos, neg = sh_encode(d), sh_encode(-d)
    parity = np.concatenate([np.full(2 * l + 1, (-1.0) ** l) for l in range(4)])
    assert np.array_equal(neg, parity * pos)
