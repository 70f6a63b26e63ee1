import numpy as np
import pytest

from laplace_sindy.errors import MissingInitialValues, NonFinite, NonPositiveFrequency, PoleProximity, TooFewSnapshots
from laplace_sindy.laplace import (
    FrequencyGrid,
    LaplaceLibrary,
    TransformOptions,
    assemble_library,
    assemble_pde_library,
    boundary_projector,
    transform_derivative_ibp,
    transform_series,
    transform_special,
)
from laplace_sindy.library import LibrarySpec, build_time_library, special
from laplace_sindy.sim import SpatioTemporalField, SystemSpec, TimeGrid, TimeSeriesSet, solve_pde

from .frozen import (
    DELTA_WEIGHT_S2,
    EXP_EXACT_S2,
    EXP_RECTANGLE_S2,
    EXP_TRAPEZOID_S2,
    SIN2_SECOND_DERIVATIVE_S3,
    SIN2_TRANSFORM_S3,
    TWO_POINT_SUM,
)

FINE = TimeGrid.uniform(0, 10, 10001)


def test_two_point_sum_as_written():
    assert transform_series([1, 1], np.array([0.0, 1.0]), 1.0) == pytest.approx(TWO_POINT_SUM, rel=1e-15)


def test_zero_series():
    assert transform_series(np.zeros(FINE.m), FINE, [0.5, 2.0]) == pytest.approx([0, 0])


def test_exponential_decay_each_scheme():
    u = np.exp(-FINE.t)
    assert transform_series(u, FINE, 2.0) == pytest.approx(EXP_RECTANGLE_S2, rel=1e-12)
    assert transform_series(u, FINE, 2.0, "true_trapezoid") == pytest.approx(EXP_TRAPEZOID_S2, rel=1e-12)
    assert abs(transform_series(u, FINE, 2.0) - EXP_EXACT_S2) < 2e-3
    assert abs(transform_series(u, FINE, 2.0, "exponential") - EXP_EXACT_S2) < 1e-12


def test_nonpositive_frequency():
    with pytest.raises(NonPositiveFrequency):
        transform_series(np.ones(FINE.m), FINE, 0.0)
    with pytest.raises(NonPositiveFrequency):
        FrequencyGrid(np.array([-1.0, 1.0]))


def test_frequency_grid_checks():
    with pytest.raises(ValueError):
        FrequencyGrid(np.array([]))
    with pytest.raises(ValueError):
        FrequencyGrid.uniform(1.0, 0.0)
    assert FrequencyGrid.uniform(0.5, 0.25, 4).s == pytest.approx([0.5, 0.75, 1.0, 1.25])


def test_ibp_of_constant_vanishes_as_sT_grows():
    u = np.full(FINE.m, 3.0)
    val = transform_derivative_ibp(u, FINE, 5.0, 1, [3.0], "true_trapezoid")
    assert abs(val) < 1e-3


def test_ibp_of_ramp_matches_unit_transform():
    u = FINE.t.copy()
    lhs = transform_derivative_ibp(u, FINE, 2.0, 1, [0.0])
    rhs = transform_series(np.ones(FINE.m), FINE, 2.0)
    assert abs(lhs - rhs) < 1e-3


def test_second_order_ibp_on_sine():
    u = np.sin(2 * FINE.t)
    val = transform_derivative_ibp(u, FINE, 3.0, 2, [0.0, 2.0], "true_trapezoid")
    assert val == pytest.approx(SIN2_SECOND_DERIVATIVE_S3, abs=1e-3)
    assert -4 * transform_series(u, FINE, 3.0, "true_trapezoid") == pytest.approx(-4 * SIN2_TRANSFORM_S3, abs=1e-3)


def test_ibp_needs_initial_values():
    with pytest.raises(MissingInitialValues):
        transform_derivative_ibp(FINE.t, FINE, 1.0, 2, [0.0])


def test_special_closed_forms():
    assert transform_special("delta", 1.0, 2.0) == pytest.approx(DELTA_WEIGHT_S2)
    assert transform_special("delta", 1.5, 2.0, t1=0.5) == pytest.approx(DELTA_WEIGHT_S2)
    assert transform_special("step", 1.0, 2.0) == pytest.approx(DELTA_WEIGHT_S2 / 2)
    assert transform_special("sin", 3.0, 1.0) == pytest.approx(0.3)
    assert transform_special("cos", 1.0, 2.0) == pytest.approx(0.4)
    assert transform_special("sinh", 2.0, 3.0) == pytest.approx(0.4)
    assert transform_special("cosh", 2.0, 3.0) == pytest.approx(0.6)


def test_hyperbolic_pole():
    with pytest.raises(PoleProximity):
        transform_special("cosh", 2.0, 2.0001)


def _decay_library(rate, spec, scheme="true_trapezoid"):
    data = TimeSeriesSet(FINE, np.exp(-rate * FINE.t)[None])
    return build_time_library(data, spec), data


def test_library_of_decay_matches_closed_forms():
    tlib, _ = _decay_library(1.0, LibrarySpec(d=1, k=0, n=1))
    freq = FrequencyGrid(np.array([1.0, 2.0, 3.0]))
    lib = assemble_library(tlib, freq, TransformOptions(scheme="exponential"))
    s, T = freq.s, 10.0
    one = (1 - np.exp(-s * T)) / s
    ramp = (1 - np.exp(-s * T) * (1 + s * T)) / s**2
    dec = (1 - np.exp(-(s + 1) * T)) / (s + 1)
    assert lib.theta == pytest.approx(np.column_stack([one, ramp, dec]), rel=1e-9)


def test_derivative_column_tracks_state_column():
    tlib, _ = _decay_library(2.0, LibrarySpec(d=1, k=1, n=1))
    lib = assemble_library(tlib, FrequencyGrid.uniform(0.5, 0.5, 10), TransformOptions(scheme="true_trapezoid"))
    names = lib.rendered()
    ut, u = lib.theta[:, names.index("u_t")], lib.theta[:, names.index("u")]
    assert np.max(np.abs(ut + 2 * u) / np.abs(2 * u)) < 1e-3


def test_projected_boundary_removes_initial_values():
    tlib, _ = _decay_library(2.0, LibrarySpec(d=1, k=1, n=1, include_constant=False, include_time=False))
    lib = assemble_library(tlib, FrequencyGrid.uniform(0.5, 0.5, 10), TransformOptions(scheme="exponential", boundary="project"))
    names = lib.rendered()
    r = lib.theta[:, names.index("u_t")] + 2 * lib.theta[:, names.index("u")]
    assert np.linalg.norm(r) < 1e-8 * np.linalg.norm(lib.theta[:, names.index("u")])


def test_boundary_projector_annihilates_low_degree_polynomials():
    s = np.linspace(0.5, 3, 12)
    P = boundary_projector(s, 3)
    for k in range(3):
        assert np.linalg.norm(P @ s**k) < 1e-10 * np.linalg.norm(s**k)
    assert np.allclose(P @ P, P)
    with pytest.raises(ValueError):
        boundary_projector(s, 12)


def test_library_rejects_non_finite():
    with pytest.raises(NonFinite):
        LaplaceLibrary(np.array([[np.nan]]), [], FrequencyGrid(np.array([1.0])), [(1.0,)])


def test_library_csv(tmp_path):
    tlib, _ = _decay_library(1.0, LibrarySpec(d=1, k=1, n=1))
    with pytest.warns(UserWarning, match="3 frequencies for 4 terms"):
        lib = assemble_library(tlib, FrequencyGrid.uniform(1, 1, 3))
    lib.to_csv(tmp_path / "theta.csv")
    lines = (tmp_path / "theta.csv").read_text().splitlines()
    assert lines[0] == "s,1,t,u,u_t"
    assert len(lines) == 4


PDE_SPEC = LibrarySpec(d=1, k=3, n=2, pde=True)


def test_time_constant_field_has_zero_time_column():
    tg, x = TimeGrid.uniform(0, 1, 60), np.linspace(0, 5, 200)
    f = SpatioTemporalField(tg, x, np.repeat(np.exp(-x)[:, None], tg.m, axis=1))
    lib = assemble_pde_library(f, PDE_SPEC, FrequencyGrid.uniform(1, 0.1, 20), TransformOptions(pde_axis="space"))
    col = lib.theta[:, 0]
    assert np.linalg.norm(col) / np.linalg.norm(lib.theta[:, 1]) < 1e-6


@pytest.mark.parametrize("mode", ["derivative", "window"])
def test_convection_diffusion_columns_balance(mode):
    tg, x = TimeGrid.uniform(0, 5, 500), np.linspace(0, 5, 1000)
    f = solve_pde(SystemSpec("convection_diffusion"), tg, x)
    opts = TransformOptions(scheme="exponential", pde_axis="space", time_mode=mode)
    lib = assemble_pde_library(f, PDE_SPEC, FrequencyGrid.uniform(2, 0.1, 20), opts)
    names = lib.rendered()
    cols = {n: lib.theta[:, names.index(n)] for n in ("u_t", "u_x", "u_xx")}
    r = cols["u_t"] + cols["u_x"] - cols["u_xx"]
    assert np.linalg.norm(r) / np.linalg.norm(cols["u_t"]) < 1e-2


def test_too_few_snapshots():
    tg, x = TimeGrid.uniform(0, 1, 10), np.linspace(0, 1, 50)
    f = SpatioTemporalField(tg, x, np.ones((50, 10)))
    with pytest.raises(TooFewSnapshots):
        assemble_pde_library(f, PDE_SPEC, FrequencyGrid.uniform(1, 1, 5), TransformOptions(pde_axis="space", snapshot_stride=50))


def test_transform_option_validation():
    with pytest.raises(ValueError):
        TransformOptions(snapshot_stride=0)
    with pytest.raises(ValueError):
        TransformOptions(scheme="simpson")
    with pytest.raises(ValueError):
        TransformOptions(time_mode="weekly")
