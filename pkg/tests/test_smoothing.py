import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothopt.smoothing import (SmoothedObjective, SmoothingConfig, estimate_gradient,
                                 estimate_hessian, estimate_objective, gaussian_pdf,
                                 smoothed_values)

M = 2**16


def const(c):
    return lambda Y: np.full(len(Y), c)


def test_gaussian_pdf_examples():
    assert gaussian_pdf([0.0], [0.0], [1.0]) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert gaussian_pdf([1.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == pytest.approx(1 / (2 * math.pi))
    assert gaussian_pdf([1.0], [0.0], [1.0]) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi))
    assert gaussian_pdf([0.3], [0.0], [0.5]) == pytest.approx(
        math.exp(-0.5 * 0.36) / (0.5 * math.sqrt(2 * math.pi)))
    with pytest.raises(ValueError):
        gaussian_pdf([0.0], [0.0], [0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        SmoothingConfig((1.0, -1.0))
    with pytest.raises(ValueError):
        SmoothingConfig((1.0,), n_samples=1)
    assert SmoothingConfig([0.5, 2]).sigmas == (0.5, 2.0)


def test_constant_field():
    cfg = SmoothingConfig((0.7, 2.0), M)
    mean, err = estimate_objective([0.1, -3.0], cfg, const(3.0))
    assert mean == 3.0 and err == 0.0
    g = estimate_gradient([0.1, -3.0], cfg, const(3.0))
    assert np.all(np.abs(g) <= 4 * 3.0 / (np.array([0.7, 2.0]) * math.sqrt(M)))
    H = estimate_hessian([0.1, -3.0], cfg, const(3.0))
    assert np.max(np.abs(H)) < 1e-2


def test_second_moment():
    cfg = SmoothingConfig((1.0,), M)
    mean, err = estimate_objective([0.0], cfg, lambda Y: Y[:, 0] ** 2)
    assert abs(mean - 1.0) <= 3 * err
    g = estimate_gradient([0.0], cfg, lambda Y: Y[:, 0])
    assert g[0] == pytest.approx(1.0, abs=3 * math.sqrt(2 / M) + 1e-3)
    H = estimate_hessian([0.0], cfg, lambda Y: Y[:, 0] ** 2)
    assert H[0, 0] == pytest.approx(2.0, abs=0.02)


def test_unit_step_half():
    for sigma in (0.05, 0.2, 3.0):
        mean, err = estimate_objective([0.0], SmoothingConfig((sigma,), M),
                                       lambda Y: (Y[:, 0] > 0).astype(float))
        assert abs(mean - 0.5) <= 3 * err


def _quadratic(A, b, c):
    return lambda Y: np.einsum("ni,ij,nj->n", Y, A, Y) + Y @ b + c


def test_anchored_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    d = 3
    A = rng.normal(size=(d, d))
    A = 0.5 * (A + A.T)
    b = rng.normal(size=d)
    field = _quadratic(A, b, 0.3)
    cfg = SmoothingConfig((0.4, 1.0, 0.7), M)
    anchor = rng.normal(size=d)
    x = anchor + 0.05
    model = SmoothedObjective(field, cfg, anchor)
    h = 1e-5
    fd_g = np.array([(model.value(x + h * e) - model.value(x - h * e)) / (2 * h) for e in np.eye(d)])
    np.testing.assert_allclose(model.gradient(x), fd_g, rtol=1e-6, atol=1e-8)
    fd_H = np.array([(model.gradient(x + h * e) - model.gradient(x - h * e)) / (2 * h)
                     for e in np.eye(d)])
    np.testing.assert_allclose(model.hessian(x), fd_H, rtol=1e-5, atol=1e-6)


def test_anchor_reweighting_is_exact_at_anchor():
    cfg = SmoothingConfig((0.5,), 1024)
    field = lambda Y: np.sin(3 * Y[:, 0])
    m = SmoothedObjective(field, cfg, [0.2])
    assert m.value([0.2]) == estimate_objective([0.2], cfg, field)[0]


def test_hessian_symmetric():
    rng = np.random.default_rng(1)
    field = lambda Y: np.sin(Y @ np.array([1.0, -2.0, 0.5])) + (Y[:, 0] > 0)
    H = estimate_hessian(rng.normal(size=3), SmoothingConfig((1.0, 0.5, 2.0), 4096), field)
    np.testing.assert_array_equal(H, H.T)


def test_sigma_to_zero_consistency():
    field = lambda Y: np.abs(Y[:, 0] - 0.3) + np.cos(Y[:, 1])
    x = np.array([0.1, 0.4])
    exact = field(x[None, :])[0]
    errors = [abs(estimate_objective(x, SmoothingConfig((s, s), 4096), field)[0] - exact)
              for s in (1e-1, 1e-2, 1e-3)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 2e-3


def test_smoothed_values_vectorised():
    cfg = SmoothingConfig((0.3,), 512)
    field = lambda Y: Y[:, 0] ** 3
    pts = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(smoothed_values(pts, cfg, field),
                                  [estimate_objective(p, cfg, field)[0] for p in pts])


def test_field_shape_checked():
    with pytest.raises(ValueError):
        SmoothedObjective(lambda Y: np.zeros(3), SmoothingConfig((1.0, 1.0), 64), [0.0, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1, 2, 3]), st.floats(0.05, 2.0))
def test_range_preservation(seed, d, sigma):
    rng = np.random.default_rng(seed)
    sites = rng.normal(size=(20, d))
    values = rng.normal(size=20)

    def field(Y):
        D = np.linalg.norm(Y[:, None, :] - sites[None], axis=2)
        return values[np.argmin(D, axis=1)]

    x = rng.normal(size=d)
    mean, _ = estimate_objective(x, SmoothingConfig((sigma,) * d, 1024), field)
    assert values.min() - 1e-12 <= mean <= values.max() + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_common_random_numbers_determinism(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=2)
    cfg = SmoothingConfig((0.3, 0.9), 2048)
    field = lambda Y: np.floor(Y[:, 0]) + Y[:, 1] ** 2
    assert estimate_objective(x, cfg, field) == estimate_objective(x, cfg, field)
    np.testing.assert_array_equal(estimate_gradient(x, cfg, field),
                                  estimate_gradient(x, cfg, field))
