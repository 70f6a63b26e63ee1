import numpy as np
import pytest

from laplace_sindy.errors import LibraryOverflow, NonUniformGrid, TooShort
from laplace_sindy.library import (
    LibrarySpec,
    TermDescriptor,
    build_time_library,
    deriv,
    enumerate_terms,
    estimate_derivatives,
    initial_derivatives,
    library_size,
    parse_term,
    special,
    state,
)
from laplace_sindy.sim import TimeGrid, TimeSeriesSet


def rendered(spec):
    return [t.render(spec.names) for t in enumerate_terms(spec)]


def series(t, *rows):
    return TimeSeriesSet(TimeGrid(np.asarray(t, dtype=float)), np.array(rows, dtype=float))


def test_second_order_quadratic_library_has_fifteen_terms():
    spec = LibrarySpec(d=1, k=2, n=2)
    assert rendered(spec) == [
        "1", "t", "u", "u_t", "u_tt",
        "t^2", "t*u", "t*u_t", "t*u_tt", "u^2", "u*u_t", "u*u_tt", "u_t^2", "u_t*u_tt", "u_tt^2",
    ]


def test_zero_order_linear_library():
    assert rendered(LibrarySpec(d=1, k=0, n=1)) == ["1", "t", "u"]


def test_two_channel_first_order_library():
    assert rendered(LibrarySpec(d=2, k=1, n=1)) == ["1", "t", "u1", "u2", "u1_t", "u2_t"]


def test_specials_are_standalone_columns():
    spec = LibrarySpec(d=1, k=2, n=2, specials=(special("delta", 1.0),))
    names = rendered(spec)
    assert names.count("delta(t-1)") == 1
    assert len(names) == library_size(1, 2, 2) + 1
    assert not any("delta" in n and "*" in n for n in names)


def test_library_cap():
    with pytest.raises(LibraryOverflow):
        enumerate_terms(LibrarySpec(d=3, k=4, n=3, max_terms=100))


def test_pruned_system_library():
    spec = LibrarySpec(
        d=3, k=1, n=2, include_constant=False, derivative_products=False,
        exclude=("t", "t^2", "x^2", "y^2", "z^2"), names=("x", "y", "z"),
    )
    assert rendered(spec) == ["x", "y", "z", "x_t", "y_t", "z_t", "t*x", "t*y", "t*z", "x*y", "x*z", "y*z"]


def test_pde_library():
    assert rendered(LibrarySpec(d=1, k=3, n=2, pde=True)) == ["u_t", "u", "u_x", "u_xx", "u_xxx", "u*u_x", "u*u_xx", "u*u_xxx"]


def test_render_parse_round_trip():
    spec = LibrarySpec(d=2, k=2, n=3, specials=(special("sin", 3.0), special("step", 1.5)))
    for term in enumerate_terms(spec):
        assert parse_term(term.render(spec.names), spec.names) == term


def test_descriptor_order_is_canonical():
    assert TermDescriptor((deriv(0, 1), state(0))) == TermDescriptor((state(0), deriv(0, 1)))


def test_linear_series_derivatives_are_exact():
    t = np.linspace(0, 2, 21)
    d, init = estimate_derivatives(series(t, 3 * t + 1), 2)
    assert np.allclose(d[0], 3, atol=1e-12)
    assert np.allclose(d[1], 0, atol=1e-10)
    assert init[0] == pytest.approx([1, 3])


def test_constant_series_has_zero_derivatives():
    t = np.linspace(0, 1, 30)
    d, _ = estimate_derivatives(series(t, np.full(30, 2.5)), 3)
    assert not np.any(np.abs(d) > 1e-9)


def test_sine_first_derivative():
    t = np.arange(0, 6.283, 1e-3)
    d, _ = estimate_derivatives(series(t, np.sin(t)), 1)
    assert np.max(np.abs(d[0, 0, 1:-1] - np.cos(t[1:-1]))) < 1e-5


def test_derivative_preconditions():
    with pytest.raises(TooShort):
        estimate_derivatives(series(np.arange(5.0), np.arange(5.0)), 2)
    t = np.cumsum(np.linspace(1, 2, 20))
    with pytest.raises(NonUniformGrid):
        estimate_derivatives(series(t, t), 2)


def test_initial_derivatives_of_cubic():
    t = np.linspace(0.5, 1.5, 40)
    u = 2 - t + 3 * (t - 0.5) ** 2 + (t - 0.5) ** 3
    assert initial_derivatives(u, t, 3) == pytest.approx([1.5, -1, 6], abs=1e-8)


def test_product_terms_are_pointwise_products():
    t = np.linspace(0, 1, 3001)
    data = series(t, np.exp(2 * t))
    spec = LibrarySpec(d=1, k=1, n=2)
    lib = build_time_library(data, spec)
    names = lib.rendered()
    u, ut = lib.series[names.index("u")], lib.series[names.index("u_t")]
    assert np.array_equal(lib.series[names.index("u*u_t")], u * ut)
    assert np.array_equal(lib.series[names.index("1")], np.ones(t.size))
    assert np.max(np.abs(lib.series[names.index("u*u_t")] - 2 * np.exp(4 * t))) < 1e-3


def test_square_of_small_series():
    lib = build_time_library(series([0, 1, 2, 3], [1, 2, 3, 4]), LibrarySpec(d=1, k=0, n=2))
    assert lib.series[lib.rendered().index("u^2")] == pytest.approx([1, 4, 9, 16])


def test_delta_term_has_no_samples():
    t = np.linspace(0, 2, 50)
    lib = build_time_library(series(t, t), LibrarySpec(d=1, k=1, n=1, specials=(special("delta", 1.0),)))
    assert np.isnan(lib.series[-1]).all()
