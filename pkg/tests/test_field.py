import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probnerf import autodiff as ad
from probnerf.autodiff import Tensor, grad_check
from probnerf.encoding import HashGridConfig
from probnerf.field import ConditionalFlow, FieldConfig, RadianceField, combine

TINY = FieldConfig(HashGridConfig(levels=3, base_resolution=2, growth=2.0, table_size=2 ** 8),
                   hidden=16, density_feature=8, color_feature=8, flow_depth=3, flow_hidden=8)


def randomize_flow(flow, rng, scale=0.5):
    for step in flow.steps:
        step.out.weight.data[:] = rng.normal(0, scale, step.out.weight.shape)
        step.out.bias.data[:] = rng.normal(0, scale, step.out.bias.shape)
    return flow


def unit_dirs(n, rng):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@pytest.fixture
def field():
    return RadianceField(TINY, np.random.default_rng(0))


def test_fresh_mean_branch_is_valid(field):
    rng = np.random.default_rng(1)
    sigma, color, hs, hc = field.eval_mean(rng.uniform(0, 1, (20, 3)), unit_dirs(20, rng))
    assert np.all(sigma.data >= 0) and np.all(np.isfinite(sigma.data))
    assert np.allclose(sigma.data, math.log(2), atol=0.3)
    assert np.all((color.data >= 0) & (color.data <= 1))
    assert hs.shape == (20, 8) and hc.shape == (20, 8)


def test_mean_branch_is_deterministic(field):
    rng = np.random.default_rng(2)
    x, d = rng.uniform(0, 1, (5, 3)), unit_dirs(5, rng)
    a, b = field.eval_mean(x, d), field.eval_mean(x, d)
    for u, v in zip(a, b):
        assert np.array_equal(u.data, v.data)


@pytest.mark.parametrize("which,dim", [("density", 1), ("color", 3)])
def test_identity_initialised_flows(field, which, dim):
    rng = np.random.default_rng(3)
    u0 = rng.standard_normal((10, dim))
    h = rng.standard_normal((10, 8))
    out, log_det = field.flow_forward(u0, h, which)
    assert np.array_equal(out.data, u0) and np.all(log_det.data == 0)
    assert np.array_equal(field.flow_inverse(u0, h, which).data, u0)


def test_single_affine_step():
    a, b = 0.7, -0.3
    flow = ConditionalFlow(1, 2, 1, 4, np.random.default_rng(0))
    out = flow.steps[0].out
    out.bias.data[:] = [5 * math.atanh(a / 5), b]
    u = np.array([[1.3], [-0.2]])
    y, log_det = flow.forward(u, np.zeros((2, 2)))
    assert np.allclose(y.data, math.exp(a) * u + b, atol=1e-12)
    assert np.allclose(log_det.data, a, atol=1e-12)
    lp = flow.log_density(np.array([[b]]), np.zeros((1, 2)))
    assert lp.data[0] == pytest.approx(-0.918939 - a, abs=1e-6)


def test_identity_log_density_at_zero():
    flow = ConditionalFlow(1, 2, 3, 4, np.random.default_rng(0))
    assert flow.log_density(np.zeros((1, 1)), np.zeros((1, 2))).data[0] == pytest.approx(
        -0.918939, abs=1e-6)


def test_log_scale_is_bounded():
    flow = ConditionalFlow(1, 2, 1, 4, np.random.default_rng(0))
    flow.steps[0].out.bias.data[:] = [1e3, 0.0]
    _, log_det = flow.forward(np.ones((1, 1)), np.zeros((1, 2)))
    assert log_det.data[0] == pytest.approx(5.0)


@pytest.mark.parametrize("dim", [1, 3])
def test_round_trip_bijectivity(dim):
    rng = np.random.default_rng(4)
    flow = randomize_flow(ConditionalFlow(dim, 6, 4, 8, rng), rng)
    u0 = rng.standard_normal((1000, dim))
    h = rng.standard_normal((1000, 6))
    y, _ = flow.forward(u0, h)
    assert np.abs(flow.inverse(y, h)[0].data - u0).max() < 1e-6
    v = rng.standard_normal((1000, dim)) * 2
    back, _ = flow.forward(flow.inverse(v, h)[0], h)
    assert np.abs(back.data - v).max() < 1e-6


def test_scalar_log_det_matches_finite_difference():
    rng = np.random.default_rng(5)
    flow = randomize_flow(ConditionalFlow(1, 4, 3, 8, rng), rng)
    u = rng.standard_normal((200, 1))
    h = rng.standard_normal((200, 4))
    _, log_det = flow.forward(u, h)
    eps = 1e-6
    dydu = (flow.forward(u + eps, h)[0].data - flow.forward(u - eps, h)[0].data) / (2 * eps)
    assert np.abs(np.log(np.abs(dydu[:, 0])) - log_det.data).max() < 1e-4


def test_color_log_det_matches_jacobian_determinant():
    rng = np.random.default_rng(6)
    flow = randomize_flow(ConditionalFlow(3, 4, 4, 8, rng), rng)
    u = rng.standard_normal((20, 3))
    h = rng.standard_normal((20, 4))
    _, log_det = flow.forward(u, h)
    eps = 1e-6
    jac = np.zeros((20, 3, 3))
    for k in range(3):
        du = np.zeros(3)
        du[k] = eps
        jac[:, :, k] = (flow.forward(u + du, h)[0].data - flow.forward(u - du, h)[0].data) / (2 * eps)
    assert np.abs(np.log(np.abs(np.linalg.det(jac))) - log_det.data).max() < 1e-4


def test_color_coupling_alternates_channels():
    flow = ConditionalFlow(3, 2, 4, 4, np.random.default_rng(0))
    assert [s.active for s in flow.steps] == [[2], [0, 1], [2], [0, 1]]


def test_density_integrates_to_one():
    rng = np.random.default_rng(7)
    flow = randomize_flow(ConditionalFlow(1, 3, 4, 8, rng), rng, scale=0.15)
    grid = np.linspace(-10, 10, 20001)
    for _ in range(5):
        h = np.repeat(rng.standard_normal((1, 3)), len(grid), axis=0)
        p = np.exp(flow.log_density(grid[:, None], h).data)
        assert abs(np.trapezoid(p, grid) - 1.0) < 1e-3


def test_push_forward_matches_histogram_density():
    rng = np.random.default_rng(8)
    flow = randomize_flow(ConditionalFlow(1, 2, 3, 8, rng), rng, scale=0.3)
    h1 = rng.standard_normal((1, 2))
    n = 100_000
    y = flow.forward(rng.standard_normal((n, 1)), np.repeat(h1, n, axis=0))[0].data[:, 0]
    lo, hi = np.quantile(y, [0.2, 0.8])
    edges = np.linspace(lo, hi, 9)
    counts, _ = np.histogram(y, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    empirical = counts / (n * np.diff(edges))
    # average of the analytic density over each bin
    fine = np.linspace(lo, hi, 8 * 200 + 1)
    dens = np.exp(flow.log_density(fine[:, None], np.repeat(h1, len(fine), axis=0)).data)
    analytic = np.array([np.trapezoid(dens[i * 200:(i + 1) * 200 + 1], fine[i * 200:(i + 1) * 200 + 1])
                         for i in range(8)]) / np.diff(edges)
    assert centers.shape == analytic.shape
    assert np.all(np.abs(empirical / analytic - 1) < 0.05)


def test_non_finite_flow_reports_step():
    flow = ConditionalFlow(1, 2, 2, 4, np.random.default_rng(0))
    flow.steps[1].out.bias.data[:] = [0.0, np.inf]
    with pytest.raises(ad.NonFiniteError, match="step 1"):
        flow.forward(np.zeros((1, 1)), np.zeros((1, 2)))


def test_log_density_gradients_pass_grad_check():
    rng = np.random.default_rng(9)
    flow = randomize_flow(ConditionalFlow(3, 4, 2, 6, rng), rng, scale=0.3)
    y, h = rng.standard_normal((7, 3)), Tensor(rng.standard_normal((7, 4)))
    for name, p in flow.named_parameters().items():
        assert grad_check(lambda _: flow.log_density(y, h).sum(), p) < 1e-4, name


# ---------------------------------------------------------------- sampling and combination

def test_identity_flow_samples_are_mean_plus_noise(field):
    rng = np.random.default_rng(10)
    x, d = rng.uniform(0, 1, (3, 3)), unit_dirs(3, rng)
    n = 100_000
    samples = field.sample_field(x, d, n, np.random.default_rng(11), clamp=False)
    res = np.stack([s.sigma_res for s in samples])
    assert np.all(np.abs(res.mean(axis=0)) < 3 / math.sqrt(n))
    clamped = field.sample_field(x, d, 5, np.random.default_rng(11))
    for s_c, s_u in zip(clamped, samples[:5]):
        assert np.array_equal(s_c.sigma, np.maximum(0.0, s_u.sigma_mean + s_u.sigma_res))


def test_sampling_is_deterministic_under_seed(field):
    rng = np.random.default_rng(12)
    x, d = rng.uniform(0, 1, (4, 3)), unit_dirs(4, rng)
    a = field.sample_field(x, d, 1, np.random.default_rng(5))[0]
    b = field.sample_field(x, d, 1, np.random.default_rng(5))[0]
    assert np.array_equal(a.sigma, b.sigma) and np.array_equal(a.color, b.color)


def test_known_affine_flow_variance(field):
    # log-scale ln 0.5 and zero shift on the first step: residual = 0.5 u
    out = field.density_flow.steps[0].out
    out.bias.data[:] = [5 * math.atanh(math.log(0.5) / 5), 0.0]
    rng = np.random.default_rng(13)
    x, d = rng.uniform(0, 1, (1, 3)), unit_dirs(1, rng)
    samples = field.sample_field(x, d, 100_000, np.random.default_rng(14), clamp=False)
    var = np.var([s.sigma_res[0] for s in samples])
    assert abs(var / 0.25 - 1) < 0.05


def test_sample_count_must_be_positive(field):
    with pytest.raises(ValueError):
        field.sample_field(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), 0, np.random.default_rng())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4),
       st.lists(st.floats(-3, 3), min_size=12, max_size=12))
def test_combined_values_stay_in_range(sig, col):
    sig_mu = Tensor(np.abs(np.array(sig[:2])))
    sig_res = Tensor(np.array(sig[2:]))
    col = np.array(col).reshape(4, 3)
    sigma, color = combine(sig_mu, Tensor(np.clip(col[:2], 0, 1)), sig_res, Tensor(col[2:]))
    assert np.all(sigma.data >= 0)
    assert np.all((color.data >= 0) & (color.data <= 1))
