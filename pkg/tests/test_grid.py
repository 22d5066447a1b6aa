import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import cumulative_trapezoid as scipy_cumtrapz

from evocontrol.grid import (
    Grid,
    GridField,
    build_grid,
    cumulative_trapezoid,
    quadrature,
    reverse_cumulative_trapezoid,
    time_derivative,
)


def test_example_grids():
    g = build_grid(61, 0.0, 3.0)
    np.testing.assert_allclose(g.t, 0.05 * np.arange(61), rtol=0, atol=1e-15)
    assert g.t[0] == 0.0 and g.t[-1] == 3.0
    np.testing.assert_array_equal(build_grid(3, 0.0, 1.0).t, [0.0, 0.5, 1.0])
    assert build_grid(51, 0.0, 25.0).h == 0.5


@pytest.mark.parametrize("N,t0,tf", [(2, 0.0, 1.0), (61, 1.0, 1.0), (61, 2.0, 1.0)])
def test_invalid_grids(N, t0, tf):
    with pytest.raises(ValueError):
        build_grid(N, t0, tf)


def test_sigma_preserved_under_new_tf():
    g = build_grid(51, 0.0, 25.0)
    g2 = g.with_tf(23.51)
    np.testing.assert_array_equal(g.sigma, g2.sigma)
    assert g2.t[-1] == 23.51
    assert g.sigma[0] == 0.0 and g.sigma[-1] == 1.0


def test_derivative_exact_on_linear_and_quadratic():
    g = build_grid(61, 0.0, 3.0)
    lin = 2.0 - 0.7 * g.t
    np.testing.assert_allclose(time_derivative(lin[:, None], g)[:, 0], -0.7, atol=1e-13)
    quad = g.t ** 2
    np.testing.assert_allclose(time_derivative(quad, g), 2 * g.t, atol=1e-12)


def test_derivative_second_order():
    errs = []
    for N in (61, 121, 241):
        g = build_grid(N, 0.0, 3.0)
        errs.append(np.max(np.abs(time_derivative(np.sin(g.t), g) - np.cos(g.t))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.6) & (ratios < 4.4)), ratios


def test_derivative_rejects_nonfinite():
    g = build_grid(5, 0.0, 1.0)
    with pytest.raises(ValueError):
        time_derivative(np.array([0.0, 1.0, np.nan, 2.0, 3.0]), g)


def test_quadrature_examples():
    g = build_grid(61, 0.0, 3.0)
    assert quadrature(np.ones(61), g) == pytest.approx(3.0, abs=1e-14)
    assert quadrature(g.t, g) == pytest.approx(4.5, abs=1e-13)
    err = abs(quadrature(np.sin(g.t), g) - (1 - np.cos(3.0)))
    assert err <= 0.25 * g.h ** 2
    assert quadrature(g.t, g, 7, 7) == 0.0


def test_quadrature_index_errors():
    g = build_grid(11, 0.0, 1.0)
    v = np.ones(11)
    for i, j in [(-1, 3), (3, 2), (0, 11)]:
        with pytest.raises(IndexError):
            quadrature(v, g, i, j)


@settings(deadline=None, max_examples=50)
@given(
    values=arrays(np.float64, st.integers(3, 40), elements=st.floats(-1e3, 1e3)),
    data=st.data(),
)
def test_quadrature_additive(values, data):
    g = build_grid(values.size, 0.0, 2.0)
    k = data.draw(st.integers(0, values.size - 1))
    whole = quadrature(values, g)
    parts = quadrature(values, g, 0, k) + quadrature(values, g, k, values.size - 1)
    assert parts == pytest.approx(whole, abs=1e-9 * (1 + np.abs(values).sum()))


@settings(deadline=None, max_examples=50)
@given(values=arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)))
def test_cumulative_tables_match_scipy(values):
    h = 0.37
    fwd = cumulative_trapezoid(values, h)
    ref = scipy_cumtrapz(values, dx=h, axis=0, initial=0.0)
    np.testing.assert_allclose(fwd, ref, atol=1e-9 * (1 + np.abs(values).sum()))
    rev = reverse_cumulative_trapezoid(values, h)
    np.testing.assert_allclose(rev, ref[-1] - ref, atol=1e-9 * (1 + np.abs(values).sum()))


def test_derivative_then_quadrature_reconstructs():
    g = build_grid(121, 0.0, 3.0)
    v = np.exp(-g.t) * np.cos(2 * g.t)
    rebuilt = cumulative_trapezoid(time_derivative(v, g), g.h)
    assert np.max(np.abs(rebuilt - (v - v[0]))) < 5e-3


def test_gridfield_validation():
    g = build_grid(5, 0.0, 1.0)
    with pytest.raises(ValueError):
        GridField(g, np.zeros((4, 2)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        GridField(g, np.zeros((5, 2)), np.full((5, 1), np.inf))
    f = GridField(g, np.zeros((5, 2)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        f.x[0, 0] = 1.0
    assert f.tf == 1.0
    moved = f.replace(tf=2.0)
    assert moved.t[-1] == 2.0 and moved.grid.N == 5
