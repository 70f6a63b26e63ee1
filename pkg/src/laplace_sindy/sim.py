"""Ground-truth trajectories for the benchmark systems, noise injection and CSV I/O.

ODE systems are integrated with fixed-step classical Runge-Kutta; the three
benchmark PDEs use Crank-Nicolson (convection-diffusion), an implicit-explicit
finite-difference scheme (Burgers) and ETDRK4 on a Fourier grid
(Kuramoto-Sivashinsky).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridTooCoarse, NonFinite, ParseError, ShapeError, UnknownKind

ODE_KINDS = (
    "duffing",
    "fourth_order",
    "delta_forced",
    "step_forced",
    "sine_forced",
    "cosine_forced",
    "sinh_forced",
    "cosh_forced",
    "lorenz",
    "lotka_volterra",
    "custom_rhs",
)
PDE_KINDS = ("convection_diffusion", "burgers", "kuramoto_sivashinsky")

DEFAULT_PARAMS = {
    "duffing": {"omega": 2.0, "zeta": 1.0, "alpha": 0.0, "delta": 0.0, "omega_d": 1.0},
    "fourth_order": {"alpha": 8.0, "beta": 16.0},
    "delta_forced": {"alpha": 4.0, "beta": 4.0, "F0": 1.0, "t0": 1.0},
    "step_forced": {"alpha": 2.0, "F0": 1.0, "t0": 1.0},
    "sine_forced": {"alpha": 0.0, "beta": 15.0, "F0": 2.0, "omega": 3.0},
    "cosine_forced": {"alpha": 0.0, "beta": 4.0, "F0": 1.0, "omega": 1.0},
    "sinh_forced": {"alpha": 0.0, "beta": 4.0, "F0": 1.0, "omega": 2.0},
    "cosh_forced": {"alpha": 0.0, "beta": -4.0, "F0": 1.0, "omega": 2.0},
    "lorenz": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    "lotka_volterra": {"alpha": 1.0, "beta": 1.0, "delta": 1.0, "gamma": 1.0},
    "custom_rhs": {},
    "convection_diffusion": {"c": 1.0, "D": 1.0, "x0": 1.5, "width": 0.4, "amplitude": 1.0},
    "burgers": {"nu": 0.5, "a": 1.0, "x0": 5.0, "width": 1.0, "amplitude": 1.0},
    "kuramoto_sivashinsky": {"a": 1.0, "b": 1.0, "c": 1.0},
}

DEFAULT_IC = {
    "duffing": (1.0, 0.0),
    "fourth_order": (0.0, 0.0, 0.0, 1.0),
    "delta_forced": (0.0, 0.0),
    "step_forced": (0.0,),
    "sine_forced": (0.0, 0.0),
    "cosine_forced": (0.0, 0.0),
    "sinh_forced": (0.0, 0.0),
    "cosh_forced": (0.0, 0.0),
    "lorenz": (-8.0, 7.0, 27.0),
    "lotka_volterra": (2.0, 1.0),
}

CHANNEL_NAMES = {"lorenz": ("x", "y", "z"), "lotka_volterra": ("x", "y")}

_FORCING = {
    "sine_forced": np.sin,
    "cosine_forced": np.cos,
    "sinh_forced": np.sinh,
    "cosh_forced": np.cosh,
}


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing sample instants ``t_1 < ... < t_m`` with ``m >= 4``."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).copy()
        if t.ndim != 1 or t.size < 4:
            raise ShapeError("a time grid needs at least 4 samples")
        if not np.all(np.isfinite(t)):
            raise NonFinite("time grid contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if t[0] < 0:
            raise ValueError("time grid must start at t >= 0")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, start: float, stop: float, m: int) -> "TimeGrid":
        return cls(np.linspace(start, stop, int(m)))

    @property
    def m(self) -> int:
        return self.t.size

    @property
    def step(self) -> float:
        """Mean spacing; equals the spacing on uniform grids."""
        return float((self.t[-1] - self.t[0]) / (self.m - 1))

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        dt = np.diff(self.t)
        return bool(np.all(np.abs(dt - dt.mean()) <= rtol * max(dt.mean(), 1e-300) + 1e-12))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.t, other.t)


@dataclass(frozen=True, eq=False)
class TimeSeriesSet:
    """``d`` state channels sampled on a common :class:`TimeGrid`."""

    grid: TimeGrid
    states: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.shape[1] != self.grid.m:
            raise ShapeError(f"states have {states.shape[1]} columns, grid has {self.grid.m} samples")
        if not np.all(np.isfinite(states)):
            raise NonFinite("time series contains non-finite values")
        names = tuple(self.names) or default_names(states.shape[0])
        if len(names) != states.shape[0]:
            raise ShapeError("one name per channel is required")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "names", names)

    @property
    def d(self) -> int:
        return self.states.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def __eq__(self, other):
        return (
            isinstance(other, TimeSeriesSet)
            and self.grid == other.grid
            and self.names == other.names
            and np.array_equal(self.states, other.states)
        )


@dataclass(frozen=True, eq=False)
class SpatioTemporalField:
    """Scalar field ``u(x, t)`` stored as an ``n x m`` matrix (rows are x)."""

    tgrid: TimeGrid
    xgrid: np.ndarray
    values: np.ndarray
    name: str = "u"

    def __post_init__(self):
        x = np.asarray(self.xgrid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("x grid must be strictly increasing")
        if values.shape != (x.size, self.tgrid.m):
            raise ShapeError(f"field shape {values.shape} does not match grids ({x.size}, {self.tgrid.m})")
        if not np.all(np.isfinite(values)):
            raise NonFinite("field contains non-finite values")
        object.__setattr__(self, "xgrid", x)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.xgrid.size

    def __eq__(self, other):
        return (
            isinstance(other, SpatioTemporalField)
            and self.tgrid == other.tgrid
            and np.array_equal(self.xgrid, other.xgrid)
            and np.array_equal(self.values, other.values)
        )


@dataclass
class SystemSpec:
    """A benchmark system: its kind, named parameters and initial state.

    Missing parameters are filled from :data:`DEFAULT_PARAMS`.  ``rhs`` is only
    used by ``custom_rhs`` and must be an explicit first-order field
    ``rhs(t, y) -> dy/dt``; ``observe`` selects the recorded channels.
    """

    kind: str
    params: dict = field(default_factory=dict)
    ic: Sequence[float] | np.ndarray | None = None
    rhs: Callable | None = None
    observe: Sequence[int] | None = None

    def __post_init__(self):
        if self.kind not in DEFAULT_PARAMS:
            raise UnknownKind(f"unknown system kind {self.kind!r}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged
        if self.kind == "custom_rhs" and self.rhs is None:
            raise ValueError("custom_rhs requires an rhs callable")

    @property
    def is_pde(self) -> bool:
        return self.kind in PDE_KINDS


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")


def default_names(d: int) -> tuple:
    if d == 1:
        return ("u",)
    return tuple(f"u{i + 1}" for i in range(d))


# ---------------------------------------------------------------------------
# Runge-Kutta integration


def _rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(rhs, t, y, t_end, substeps):
    h = (t_end - t) / substeps
    for i in range(substeps):
        y = _rk4_step(rhs, t + i * h, y, h)
    return y


def integrate_piecewise(pieces, y0, t, substeps=1):
    """Integrate a piecewise-defined first-order system on the sample grid.

    ``pieces`` is a list of ``(t_switch, rhs, jump)`` sorted by ``t_switch``;
    the first entry's switch time is ignored.  At each later switch the state
    is mapped through ``jump`` (``None`` keeps it) and ``rhs`` takes over, so
    RK4 never straddles a discontinuity.  Samples are right-continuous.
    """
    t = np.asarray(t, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((t.size, y.size))
    rhs = pieces[0][1]
    pending = list(pieces[1:])
    while pending and pending[0][0] <= t[0]:
        _, rhs, jump = pending.pop(0)
        if jump is not None:
            y = jump(y)
    out[0] = y
    for i in range(t.size - 1):
        a, b = t[i], t[i + 1]
        while pending and pending[0][0] <= b:
            tb, new_rhs, jump = pending.pop(0)
            if tb > a:
                y = _advance(rhs, a, y, tb, substeps)
                a = tb
            if jump is not None:
                y = jump(y)
            rhs = new_rhs
        if b > a:
            y = _advance(rhs, a, y, b, substeps)
        if not np.all(np.isfinite(y)):
            raise NonFinite(f"state became non-finite near t={b:g}")
        out[i + 1] = y
    return out


def rk4_integrate(rhs, ic, grid: TimeGrid, substeps: int = 1, names=None) -> TimeSeriesSet:
    """Classical RK4 on every grid interval, split into ``substeps`` equal steps."""
    y0 = np.atleast_1d(np.asarray(ic, dtype=float))
    out = integrate_piecewise([(grid.t[0], rhs, None)], y0, grid.t, substeps)
    return TimeSeriesSet(grid, out.T, names or default_names(y0.size))


# ---------------------------------------------------------------------------
# ODE benchmark systems


def _linear_second_order(alpha, beta, forcing=None):
    if forcing is None:
        return lambda t, y: np.array([y[1], -alpha * y[1] - beta * y[0]])
    return lambda t, y: np.array([y[1], -alpha * y[1] - beta * y[0] + forcing(t)])


def _ode_pieces(spec: SystemSpec, t1: float):
    p = spec.params
    kind = spec.kind
    if kind == "duffing":
        om, zeta, alpha = p["omega"], p["zeta"], p["alpha"]
        amp, om_d = p["delta"], p["omega_d"]

        def rhs(t, y):
            return np.array(
                [y[1], -2 * om * zeta * y[1] - om**2 * y[0] - alpha * y[0] ** 3 + amp * np.cos(om_d * t)]
            )

        return [(t1, rhs, None)], [0]
    if kind == "fourth_order":
        a, b = p["alpha"], p["beta"]
        return [(t1, lambda t, y: np.array([y[1], y[2], y[3], -a * y[2] - b * y[0]]), None)], [0]
    if kind == "delta_forced":
        rhs = _linear_second_order(p["alpha"], p["beta"])
        f0 = p["F0"]
        return [(t1, rhs, None), (p["t0"], rhs, lambda y: y + np.array([0.0, f0]))], [0]
    if kind == "step_forced":
        a, f0 = p["alpha"], p["F0"]
        return [
            (t1, lambda t, y: -a * y, None),
            (p["t0"], lambda t, y: -a * y + f0, None),
        ], [0]
    if kind in _FORCING:
        fn, om, f0 = _FORCING[kind], p["omega"], p["F0"]
        return [(t1, _linear_second_order(p["alpha"], p["beta"], lambda t: f0 * fn(om * (t - t1))), None)], [0]
    if kind == "lorenz":
        s, r, b = p["sigma"], p["rho"], p["beta"]

        def rhs(t, y):
            return np.array([s * (y[1] - y[0]), y[0] * (r - y[2]) - y[1], y[0] * y[1] - b * y[2]])

        return [(t1, rhs, None)], [0, 1, 2]
    if kind == "lotka_volterra":
        a, b, d, g = p["alpha"], p["beta"], p["delta"], p["gamma"]
        return [(t1, lambda t, y: np.array([a * y[0] - b * y[0] * y[1], d * y[0] * y[1] - g * y[1]]), None)], [0, 1]
    if kind == "custom_rhs":
        return [(t1, spec.rhs, None)], None
    raise UnknownKind(f"{kind!r} is not an ODE kind")


def simulate_canonical(spec: SystemSpec, grid: TimeGrid, xgrid=None, substeps: int = 20):
    """Simulate a benchmark system on ``grid`` and return the observed channels.

    Scalar higher-order equations record only ``u``; impulses are applied as
    exact velocity jumps and step inputs as right-hand-side switches at ``t0``.
    PDE kinds are delegated to :func:`solve_pde` and need ``xgrid``.
    """
    if spec.is_pde:
        if xgrid is None:
            raise ValueError(f"{spec.kind} needs a spatial grid")
        return solve_pde(spec, grid, xgrid)
    if spec.kind in ("delta_forced", "step_forced"):
        t0 = spec.params["t0"]
        if not grid.t[0] <= t0 <= grid.t[-1]:
            raise ValueError(f"forcing location t0={t0} lies outside the time grid")
    pieces, observed = _ode_pieces(spec, float(grid.t[0]))
    ic = spec.ic if spec.ic is not None else DEFAULT_IC.get(spec.kind)
    if ic is None:
        raise ValueError(f"{spec.kind} needs an initial condition")
    states = integrate_piecewise(pieces, np.asarray(ic, dtype=float), grid.t, substeps).T
    if spec.observe is not None:
        observed = list(spec.observe)
    if observed is None:
        observed = list(range(states.shape[0]))
    names = CHANNEL_NAMES.get(spec.kind, default_names(len(observed)))
    return TimeSeriesSet(grid, states[observed], names)


# ---------------------------------------------------------------------------
# PDE solvers


def convection_diffusion_gaussian(x, t, c=1.0, D=1.0, x0=1.5, width=0.4, amplitude=1.0):
    """Exact advected-and-spread Gaussian solving ``u_t + c u_x = D u_xx``."""
    var = width**2 + 2.0 * D * t
    return amplitude * width / np.sqrt(var) * np.exp(-((x - x0 - c * t) ** 2) / (2.0 * var))


def _auto_substeps(dt_out, dt_max):
    return max(1, int(math.ceil(dt_out / dt_max - 1e-12)))


def _check_uniform(x):
    dx = np.diff(x)
    if np.any(np.abs(dx - dx.mean()) > 1e-9 * dx.mean()):
        raise ValueError("PDE solvers need a uniform spatial grid")
    return float(dx.mean())


def _solve_convection_diffusion(u0, x, t, c, D, left, right, substeps):
    dx = _check_uniform(x)
    n_in = x.size - 2
    out = np.empty((x.size, t.size))
    u = np.array(u0, dtype=float)
    u[0], u[-1] = left(t[0]), right(t[0])
    out[:, 0] = u
    lo = D / dx**2 + c / (2 * dx)  # weight of u_{i-1}
    hi = D / dx**2 - c / (2 * dx)  # weight of u_{i+1}
    mid = -2.0 * D / dx**2
    for j in range(t.size - 1):
        h = (t[j + 1] - t[j]) / substeps
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -0.5 * h * hi
        ab[1, :] = 1.0 - 0.5 * h * mid
        ab[2, :-1] = -0.5 * h * lo
        tau = t[j]
        for _ in range(substeps):
            gl1, gr1 = left(tau + h), right(tau + h)
            rhs = u[1:-1] + 0.5 * h * (lo * u[:-2] + mid * u[1:-1] + hi * u[2:])
            rhs[0] += 0.5 * h * lo * gl1
            rhs[-1] += 0.5 * h * hi * gr1
            u[1:-1] = solve_banded((1, 1), ab, rhs)
            u[0], u[-1] = gl1, gr1
            tau += h
        if not np.all(np.isfinite(u)):
            raise NonFinite(f"convection-diffusion blew up near t={t[j + 1]:g}")
        out[:, j + 1] = u
    return out


def _solve_burgers(u0, x, t, nu, a, substeps):
    dx = _check_uniform(x)
    n = x.size
    u = np.array(u0, dtype=float)
    out = np.empty((n, t.size))
    out[:, 0] = u

    def advection(v):
        # -a * (v^2/2)_x with zero-gradient ghosts
        f = 0.5 * v * v
        g = np.empty_like(f)
        g[1:-1] = (f[2:] - f[:-2]) / (2 * dx)
        g[0] = g[-1] = 0.0
        return -a * g

    prev = None
    for j in range(t.size - 1):
        h = (t[j + 1] - t[j]) / substeps
        umax = max(float(np.max(np.abs(u))), 1e-12)
        if abs(a) * umax * h / dx > 0.5:
            raise GridTooCoarse(f"Burgers CFL number {abs(a) * umax * h / dx:.3f} exceeds 0.5")
        r = 0.5 * h * nu / dx**2
        ab = np.zeros((3, n))
        ab[0, 1:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        ab[2, :-1] = -r
        ab[0, 1] = -2.0 * r  # Neumann ghost at the left end
        ab[2, n - 2] = -2.0 * r  # and at the right end
        for _ in range(substeps):
            lap = np.empty_like(u)
            lap[1:-1] = u[2:] - 2 * u[1:-1] + u[:-2]
            lap[0] = 2 * (u[1] - u[0])
            lap[-1] = 2 * (u[-2] - u[-1])
            nl = advection(u)
            explicit = nl if prev is None else 1.5 * nl - 0.5 * prev
            prev = nl
            u = solve_banded((1, 1), ab, u + r * lap + h * explicit)
        if not np.all(np.isfinite(u)):
            raise NonFinite(f"Burgers solution blew up near t={t[j + 1]:g}")
        out[:, j + 1] = u
    return out


def _etdrk4_coefficients(lin, h, contour_points=32):
    roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    lr = h * lin[:, None] + roots[None, :]
    e = np.exp(h * lin)
    e2 = np.exp(h * lin / 2)
    q = h * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = h * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2 + lr + np.exp(lr) * (-2 + lr)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=1))
    return e, e2, q, f1, f2, f3


def _solve_kuramoto_sivashinsky(u0, period, t, a, b, c, substeps):
    n = u0.size
    k = 2 * np.pi * np.fft.rfftfreq(n, d=period / n)
    lin = b * k**2 - c * k**4
    g = -0.5j * a * k
    if n % 2 == 0:
        g[-1] = 0.0
    v = np.fft.rfft(u0)
    out = np.empty((n, t.size))
    out[:, 0] = u0
    cache = {}

    def nonlinear(w):
        return g * np.fft.rfft(np.fft.irfft(w, n) ** 2)

    for j in range(t.size - 1):
        h = (t[j + 1] - t[j]) / substeps
        key = round(h, 14)
        if key not in cache:
            cache[key] = _etdrk4_coefficients(lin, h)
        e, e2, q, f1, f2, f3 = cache[key]
        for _ in range(substeps):
            nv = nonlinear(v)
            av = e2 * v + q * nv
            na = nonlinear(av)
            bv = e2 * v + q * na
            nb = nonlinear(bv)
            cv = e2 * av + q * (2 * nb - nv)
            nc = nonlinear(cv)
            v = e * v + nv * f1 + 2 * (na + nb) * f2 + nc * f3
        u = np.fft.irfft(v, n)
        if not np.all(np.isfinite(u)):
            raise NonFinite(f"KS solution blew up near t={t[j + 1]:g}")
        out[:, j + 1] = u
    return out


def pde_initial_condition(spec: SystemSpec, xgrid) -> np.ndarray:
    x = np.asarray(xgrid, dtype=float)
    if spec.ic is not None:
        ic = spec.ic(x) if callable(spec.ic) else np.asarray(spec.ic, dtype=float)
        if ic.shape != x.shape:
            raise ShapeError("initial field must match the spatial grid")
        return ic
    p = spec.params
    if spec.kind == "convection_diffusion":
        return convection_diffusion_gaussian(x, 0.0, p["c"], p["D"], p["x0"], p["width"], p["amplitude"])
    if spec.kind == "burgers":
        return p["amplitude"] * np.exp(-((x - p["x0"]) ** 2) / (2 * p["width"] ** 2))
    period = x[-1] - x[0] + (x[1] - x[0])
    phase = 2 * np.pi * (x - x[0]) / period
    return np.cos(phase) * (1 + np.sin(phase))


def solve_pde(spec: SystemSpec, tgrid: TimeGrid, xgrid, substeps: int | None = None) -> SpatioTemporalField:
    """Solve one of the benchmark PDEs on the given grids.

    Convection-diffusion uses Dirichlet values from the exact Gaussian (or the
    frozen initial end values for a user field), Burgers uses zero-gradient
    outflow ends and KS is periodic with period ``x[-1] - x[0] + dx``.
    ``substeps=None`` picks an internal step from each scheme's accuracy or
    stability bound; an explicit value is checked against it.
    """
    if spec.kind not in PDE_KINDS:
        raise UnknownKind(f"{spec.kind!r} is not a PDE kind")
    x = np.asarray(xgrid, dtype=float)
    dx = _check_uniform(x)
    t = tgrid.t
    dt_out = float(np.max(np.diff(t)))
    u0 = pde_initial_condition(spec, x)
    p = spec.params
    if spec.kind == "convection_diffusion":
        if spec.ic is None:

            def left(tau):
                return convection_diffusion_gaussian(x[0], tau - t[0], p["c"], p["D"], p["x0"], p["width"], p["amplitude"])

            def right(tau):
                return convection_diffusion_gaussian(x[-1], tau - t[0], p["c"], p["D"], p["x0"], p["width"], p["amplitude"])

        else:
            l0, r0 = float(u0[0]), float(u0[-1])

            def left(tau):
                return l0

            def right(tau):
                return r0

        steps = substeps or _auto_substeps(dt_out, 2e-3)
        values = _solve_convection_diffusion(u0, x, t, p["c"], p["D"], left, right, steps)
    elif spec.kind == "burgers":
        umax = max(float(np.max(np.abs(u0))), 1e-12)
        steps = substeps or _auto_substeps(dt_out, min(0.25 * dx / (abs(p["a"]) * umax), 2e-3))
        values = _solve_burgers(u0, x, t, p["nu"], p["a"], steps)
    else:
        if p["c"] <= 0:
            raise ValueError("KS needs a positive fourth-order coefficient")
        steps = substeps or _auto_substeps(dt_out, 0.02)
        if dt_out / steps > 0.5:
            raise GridTooCoarse("KS internal step above 0.5 loses accuracy")
        values = _solve_kuramoto_sivashinsky(u0, x[-1] - x[0] + dx, t, p["a"], p["b"], p["c"], steps)
    return SpatioTemporalField(tgrid, x, values)


# ---------------------------------------------------------------------------
# Noise


def add_noise(data, spec: NoiseSpec):
    """Add i.i.d. Gaussian noise scaled by each channel's population std.

    Level 0 returns the input unchanged.  A field counts as one channel.
    """
    if spec.level == 0:
        return data
    rng = np.random.default_rng(spec.seed)
    if isinstance(data, TimeSeriesSet):
        std = data.states.std(axis=1, keepdims=True)
        noisy = data.states + spec.level * std * rng.standard_normal(data.states.shape)
        return TimeSeriesSet(data.grid, noisy, data.names)
    if isinstance(data, SpatioTemporalField):
        noisy = data.values + spec.level * data.values.std() * rng.standard_normal(data.values.shape)
        return SpatioTemporalField(data.tgrid, data.xgrid, noisy, data.name)
    arr = np.asarray(data, dtype=float)
    return arr + spec.level * arr.std() * rng.standard_normal(arr.shape)


# ---------------------------------------------------------------------------
# CSV

FIELD_CORNER = "t\\x"


def write_csv(data, path) -> None:
    """Write a series (time column + channels) or a field (first row is x)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if isinstance(data, TimeSeriesSet):
            w.writerow(["t", *data.names])
            for j, tj in enumerate(data.t):
                w.writerow([repr(float(tj)), *(repr(float(v)) for v in data.states[:, j])])
        elif isinstance(data, SpatioTemporalField):
            w.writerow([FIELD_CORNER, *(repr(float(v)) for v in data.xgrid)])
            for j, tj in enumerate(data.tgrid.t):
                w.writerow([repr(float(tj)), *(repr(float(v)) for v in data.values[:, j])])
        else:
            raise TypeError(f"cannot write {type(data).__name__} as CSV")


def _parse_float(text, line):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None


def read_csv(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ParseError("empty file", 1)
    header = rows[0]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r]
    if not body:
        raise ParseError("no data rows", 2)
    width = len(header)
    for line, r in body:
        if len(r) != width:
            raise ShapeError(f"line {line}: expected {width} fields, got {len(r)}")
    t = np.array([_parse_float(r[0], line) for line, r in body])
    for idx in range(1, t.size):
        if t[idx] <= t[idx - 1]:
            raise ParseError("time column is not strictly increasing", body[idx][0])
    values = np.array([[_parse_float(c, line) for c in r[1:]] for line, r in body])
    grid = TimeGrid(t)
    if header[0] == FIELD_CORNER:
        x = np.array([_parse_float(c, 1) for c in header[1:]])
        return SpatioTemporalField(grid, x, values.T)
    if header[0] != "t":
        raise ParseError("first header cell must be 't' or 't\\x'", 1)
    return TimeSeriesSet(grid, values.T, tuple(header[1:]))
