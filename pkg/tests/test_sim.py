import numpy as np
import pytest

from laplace_sindy.errors import NonFinite, ParseError, ShapeError, UnknownKind
from laplace_sindy.sim import (
    NoiseSpec,
    SpatioTemporalField,
    SystemSpec,
    TimeGrid,
    TimeSeriesSet,
    add_noise,
    read_csv,
    rk4_integrate,
    simulate_canonical,
    solve_pde,
    write_csv,
)

from .frozen import EXP_MINUS_ONE, fourth_order_solution


def test_zero_field_keeps_initial_value():
    out = rk4_integrate(lambda t, y: np.zeros_like(y), [1.0], TimeGrid.uniform(0, 3, 17))
    assert np.array_equal(out.states, np.ones((1, 17)))


def test_exponential_decay_endpoint():
    out = rk4_integrate(lambda t, y: -y, [1.0], TimeGrid.uniform(0, 1, 101))
    assert abs(out.states[0, -1] - EXP_MINUS_ONE) < 1e-8


def test_rk4_fourth_order_convergence():
    errs = []
    for m in (11, 21):
        out = rk4_integrate(lambda t, y: -y, [1.0], TimeGrid.uniform(0, 1, m))
        errs.append(abs(out.states[0, -1] - EXP_MINUS_ONE))
    assert errs[0] / errs[1] >= 12


def test_lorenz_equilibrium_stays_at_rest():
    out = simulate_canonical(SystemSpec("lorenz", ic=(0, 0, 0)), TimeGrid.uniform(0, 5, 50))
    assert not out.states.any()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported():
    with pytest.raises(NonFinite):
        rk4_integrate(lambda t, y: y**2, [1.0], TimeGrid.uniform(0, 5, 10))


def test_unknown_kind():
    with pytest.raises(UnknownKind):
        SystemSpec("pendulum")


def test_fourth_order_matches_symbolic_solution():
    grid = TimeGrid.uniform(0, 20, 200)
    out = simulate_canonical(SystemSpec("fourth_order"), grid)
    truth = fourth_order_solution(grid.t)
    assert np.max(np.abs(out.states[0] - truth)) < 1e-6
    # envelope grows like t / 8
    assert np.abs(out.states[0, 150:]).max() > 3 * np.abs(out.states[0, :50]).max()


def test_step_forced_is_zero_before_onset():
    grid = TimeGrid.uniform(0, 10, 1000)
    out = simulate_canonical(SystemSpec("step_forced", ic=(0.0,)), grid)
    assert not out.states[0, grid.t < 1.0].any()
    assert out.states[0, -1] == pytest.approx(0.5, abs=1e-6)


def test_sine_forced_matches_hand_converted_system():
    grid = TimeGrid.uniform(0, 10, 1000)
    out = simulate_canonical(SystemSpec("sine_forced"), grid, substeps=20)
    h = grid.step / 20
    y = np.zeros(2)
    ref = [0.0]
    f = lambda t, y: np.array([y[1], 2 * np.sin(3 * t) - 15 * y[0]])  # noqa: E731
    t = 0.0
    for _ in range(grid.m - 1):
        for _ in range(20):
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        ref.append(y[0])
    assert np.max(np.abs(out.states[0] - np.array(ref))) < 1e-8


def test_delta_forcing_jumps_velocity_only():
    grid = TimeGrid.uniform(0, 10, 1001)
    out = simulate_canonical(SystemSpec("delta_forced", observe=(0, 1)), grid)
    i = int(np.searchsorted(grid.t, 1.0))
    u, v = out.states
    # velocity just after t0 equals velocity before plus F0; u stays continuous
    assert v[i] - v[i - 1] == pytest.approx(1.0, abs=1e-2)
    assert abs(u[i] - u[i - 1]) < 2e-2


def test_convection_diffusion_matches_advected_heat_kernel():
    tg, x = TimeGrid.uniform(0, 5, 500), np.linspace(0, 5, 1000)
    field_ = solve_pde(SystemSpec("convection_diffusion"), tg, x)
    T, X = np.meshgrid(tg.t, x)
    var = 0.4**2 + 2 * T
    exact = 0.4 / np.sqrt(var) * np.exp(-((X - 1.5 - T) ** 2) / (2 * var))
    assert np.max(np.abs(field_.values - exact)) < 1e-3


@pytest.mark.parametrize("kind", ["convection_diffusion", "burgers", "kuramoto_sivashinsky"])
def test_zero_initial_field_stays_zero(kind):
    x = np.linspace(0, 10, 64)
    out = solve_pde(SystemSpec(kind, ic=np.zeros(64)), TimeGrid.uniform(0, 1, 20), x)
    assert not out.values.any()


def test_kuramoto_sivashinsky_stays_bounded():
    out = solve_pde(SystemSpec("kuramoto_sivashinsky"), TimeGrid.uniform(0, 100, 1024), np.linspace(0, 100, 251))
    assert np.abs(out.values).max() < 10


def test_noise_level_zero_is_identity():
    data = simulate_canonical(SystemSpec("duffing"), TimeGrid.uniform(0, 10, 100))
    assert add_noise(data, NoiseSpec(0.0, 3)) is data


def test_noise_is_seeded_and_scaled():
    t = np.linspace(0, 200, 20000)
    data = TimeSeriesSet(TimeGrid(t), np.sin(t)[None])
    a, b = add_noise(data, NoiseSpec(0.1, 7)), add_noise(data, NoiseSpec(0.1, 7))
    assert a == b
    ratio = (a.states - data.states).std() / data.states.std()
    assert 0.095 <= ratio <= 0.105
    mean = (a.states - data.states).mean()
    assert abs(mean) < 4 * 0.1 * data.states.std() / np.sqrt(t.size)


def test_negative_noise_level_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)


def test_csv_round_trip_series(tmp_path):
    data = simulate_canonical(SystemSpec("lorenz"), TimeGrid.uniform(0, 1, 50))
    write_csv(data, tmp_path / "a.csv")
    assert read_csv(tmp_path / "a.csv") == data


def test_csv_round_trip_field(tmp_path):
    rng = np.random.default_rng(0)
    f = SpatioTemporalField(TimeGrid.uniform(0, 1, 5), np.linspace(0, 1, 7), rng.standard_normal((7, 5)))
    write_csv(f, tmp_path / "f.csv")
    assert read_csv(tmp_path / "f.csv") == f


def test_csv_rejects_non_monotone_time(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,u\n0,1\n2,1\n1,1\n")
    with pytest.raises(ParseError) as info:
        read_csv(p)
    assert info.value.line == 4


def test_csv_rejects_empty_and_ragged(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        read_csv(p)
    p.write_text("t,u\n0,1\n1\n")
    with pytest.raises(ShapeError):
        read_csv(p)


def test_grid_rejects_short_or_unordered():
    with pytest.raises(ShapeError):
        TimeGrid(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 2.0, 1.0, 3.0]))
