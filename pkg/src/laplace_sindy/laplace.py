"""Laplace-domain featurization of a candidate library.

Every column of the time-domain library is replaced by its (discretized)
Laplace transform sampled at real frequencies ``s_1..s_L``.  Pure derivative
terms go through integration by parts so that no numerical derivative of the
data is needed, and forcing terms use their closed-form transforms.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import savgol_filter

from .errors import MissingInitialValues, NonFinite, NonPositiveFrequency, PoleProximity, TooFewSnapshots
from .library import (
    LibrarySpec,
    TimeLibrary,
    centered_derivatives,
    enumerate_terms,
    initial_derivatives,
    spatial_derivatives,
)
from .sim import SpatioTemporalField

SCHEMES = ("as_written", "true_trapezoid", "exponential")
TIME_MODES = ("derivative", "window", "cumulative")
EXP_DEGREE = 5
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing positive real frequencies."""

    s: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        if s.ndim != 1 or s.size == 0:
            raise ValueError("frequency grid is empty")
        if np.any(s <= 0):
            raise NonPositiveFrequency("all frequencies must be positive")
        if np.any(np.diff(s) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "s", s)

    @classmethod
    def uniform(cls, start: float, step: float, count: int = 20) -> "FrequencyGrid":
        if step <= 0:
            raise ValueError("frequency step must be positive")
        return cls(start + step * np.arange(int(count)))

    @property
    def L(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class TransformOptions:
    scheme: str = "as_written"
    use_ibp: bool = True
    pde_axis: str = "time"
    snapshot_stride: int | None = None
    boundary_points: int | None = None
    boundary_degree: int | None = None
    pole_tol: float = 1e-3
    time_stencil: int = 4
    smooth_x: int = 0
    smooth_t: int = 0
    smooth_order: int = 4
    x_margin: int = 0
    boundary: str = "fit"
    time_mode: str = "derivative"
    time_window: int = 20

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.pde_axis not in ("time", "space"):
            raise ValueError("pde_axis must be 'time' or 'space'")
        if self.snapshot_stride is not None and self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.boundary not in ("fit", "project"):
            raise ValueError("boundary must be 'fit' or 'project'")
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"time_mode must be one of {TIME_MODES}")
        if self.time_window < 1:
            raise ValueError("time_window must be >= 1")
        if self.x_margin < 0:
            raise ValueError("x_margin must be nonnegative")
        if self.time_stencil not in (2, 4):
            raise ValueError("time_stencil must be 2 or 4")
        for w in (self.smooth_x, self.smooth_t):
            if w and (w < 0 or w % 2 == 0 or w <= self.smooth_order):
                raise ValueError("smoothing windows must be odd and exceed smooth_order")


@dataclass(frozen=True, eq=False)
class LaplaceLibrary:
    """``theta[r, j]`` is term ``j`` transformed at row ``r``'s frequency."""

    theta: np.ndarray
    terms: list
    freq: FrequencyGrid
    row_index: list
    names: tuple = ("u",)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.theta)):
            raise NonFinite("Laplace library contains non-finite entries")

    @property
    def shape(self):
        return self.theta.shape

    def rendered(self) -> list:
        return [term.render(self.names) for term in self.terms]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            snapshot = len(self.row_index[0]) > 1
            w.writerow((["s", "t"] if snapshot else ["s"]) + self.rendered())
            for label, row in zip(self.row_index, self.theta):
                w.writerow([repr(float(v)) for v in label] + [repr(float(v)) for v in row])


def _exponential_weights(t, s, degree=EXP_DEGREE):
    # each interval integrates exp(-s x) against a local Lagrange interpolant
    n = t.size
    q = min(degree, n - 1)
    W = np.zeros((s.size, n))
    lo = np.clip(np.arange(n - 1) - (q - 1) // 2, 0, n - 1 - q)  # stencil start per interval
    stencil = lo[:, None] + np.arange(q + 1)  # (n-1, q+1)
    a, b = t[:-1], t[1:]
    xg = 0.5 * (b - a)[:, None] * _GL_NODES + 0.5 * (a + b)[:, None]  # (n-1, G)
    nodes = t[stencil]
    basis = np.ones((n - 1, q + 1, xg.shape[1]))
    for i in range(q + 1):
        for j in range(q + 1):
            if i != j:
                basis[:, i] *= (xg - nodes[:, j, None]) / (nodes[:, i, None] - nodes[:, j, None])
    gw = 0.5 * (b - a)[:, None] * _GL_WEIGHTS  # (n-1, G)
    for r, sv in enumerate(s):
        kern = np.exp(-sv * (xg - t[0])) * gw
        np.add.at(W[r], stencil, np.einsum("kig,kg->ki", basis, kern))
    return W


def _weights(t, s, scheme):
    t = np.asarray(t, dtype=float)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s <= 0):
        raise NonPositiveFrequency("frequencies must be positive")
    if scheme == "exponential":
        return _exponential_weights(t, s)
    dt = np.diff(t)
    if scheme == "as_written":
        step = np.append(dt, dt[-1])
    elif scheme == "true_trapezoid":
        step = np.zeros_like(t)
        step[:-1] += 0.5 * dt
        step[1:] += 0.5 * dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.exp(-np.outer(s, t - t[0])) * step


def transform_weights(grid, s, scheme: str = "as_written") -> np.ndarray:
    """Quadrature matrix ``W`` with ``W @ values`` the transform at each ``s``."""
    t = grid.t if hasattr(grid, "t") else grid
    return _weights(t, s, scheme)


def transform_series(values, grid, s, scheme: str = "as_written"):
    """Discrete Laplace transform of ``values`` with weight ``exp(-s (t - t_1))``.

    ``as_written`` is the rectangle-type sum ``sum_j e^{-s(t_j-t_1)} v_j dt_j``
    with ``dt_j = t_{j+1} - t_j`` and the last step repeated;
    ``true_trapezoid`` is the usual composite trapezoid rule;
    ``exponential`` integrates the kernel exactly against local degree-5
    interpolants of the samples, which stays accurate when ``s * dt`` is
    not small.  Scalar ``s``
    gives a float, an array gives one value per frequency.
    """
    values = np.asarray(values, dtype=float)
    out = transform_weights(grid, s, scheme) @ values
    return float(out[0]) if np.ndim(s) == 0 else out


def _boundary_sum(s, order, initial):
    s = np.asarray(s, dtype=float)
    return sum(s ** (order - j - 1) * initial[j] for j in range(order))


def transform_derivative_ibp(values, grid, s, order: int, initial_derivatives, scheme: str = "as_written"):
    """Transform of the ``order``-th derivative by integration by parts.

    ``s^k U(s) - sum_{j<k} s^(k-j-1) u^(j)(t_1)`` with ``U`` from
    :func:`transform_series`; ``initial_derivatives[j]`` is ``u^(j)(t_1)``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if initial_derivatives is None or len(initial_derivatives) < order:
        raise MissingInitialValues(f"order {order} needs {order} initial values")
    base = transform_series(values, grid, s, scheme)
    return np.asarray(s, dtype=float) ** order * base - _boundary_sum(s, order, initial_derivatives)


def transform_special(kind: str, param: float, s, t1: float = 0.0, pole_tol: float = 1e-3):
    """Closed-form transforms of the forcing terms.

    ``param`` is ``t0`` for ``delta``/``step`` (shifted by ``t1``) and the
    angular frequency for the trigonometric and hyperbolic inputs.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise NonPositiveFrequency("frequencies must be positive")
    if kind == "delta":
        out = np.exp(-(param - t1) * s)
    elif kind == "step":
        out = np.exp(-(param - t1) * s) / s
    elif kind in ("sin", "cos"):
        den = s**2 + param**2
        out = (param if kind == "sin" else s) / den
    elif kind in ("sinh", "cosh"):
        den = s**2 - param**2
        if np.any(np.abs(den) < pole_tol):
            raise PoleProximity(f"s too close to the pole at s={abs(param):g}")
        if np.any(s <= abs(param)):
            warnings.warn(f"{kind} transform used below its abscissa of convergence", stacklevel=2)
        out = (param if kind == "sinh" else s) / den
    else:
        raise ValueError(f"unknown special kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def assemble_library(tlib: TimeLibrary, freq: FrequencyGrid, opts: TransformOptions | None = None) -> LaplaceLibrary:
    """One row per frequency, one column per candidate term.

    With ``boundary="project"`` the initial values are not used: the
    integration-by-parts boundary terms are polynomials in ``s`` of degree
    below the highest derivative order, and that subspace is projected out
    of every column.
    """
    opts = opts or TransformOptions()
    project = opts.boundary == "project" and opts.use_ibp
    if freq.L < len(tlib.terms):
        warnings.warn(f"{freq.L} frequencies for {len(tlib.terms)} terms", stacklevel=2)
    grid = tlib.grid
    s = freq.s
    W = transform_weights(grid, s, opts.scheme)
    t1 = float(grid.t[0])
    theta = np.empty((freq.L, len(tlib.terms)))
    for j, term in enumerate(tlib.terms):
        f = term.single
        if term.is_pure_derivative and opts.use_ibp:
            u = tlib.data.states[f.channel]
            theta[:, j] = s**f.order * (W @ u)
            if not project:
                theta[:, j] -= _boundary_sum(s, f.order, tlib.initial_derivatives[f.channel])
        elif term.is_special:
            theta[:, j] = transform_special(f.special, f.param, s, t1, opts.pole_tol)
        elif term.has_delta:
            raise ValueError("impulse factors are only allowed as standalone terms")
        else:
            theta[:, j] = W @ tlib.series[j]
    kmax = max((term.max_order() for term in tlib.terms if term.is_pure_derivative), default=0)
    if project and kmax:
        theta = _project_boundary(theta, s, kmax, 1)
    return LaplaceLibrary(theta, list(tlib.terms), freq, [(float(v),) for v in s], tuple(tlib.names))


def snapshot_indices(m: int, stride: int | None, target: int = 50, margin: int = 0) -> np.ndarray:
    """Every ``stride``-th snapshot, skipping ``margin`` at each end."""
    if stride is None:
        stride = max(1, (m - 2 * margin) // target)
    if stride > m:
        raise TooFewSnapshots(f"stride {stride} exceeds the {m} available snapshots")
    idx = np.arange(margin, m - margin, stride)
    if idx.size == 0:
        raise TooFewSnapshots(f"no interior snapshots among {m}")
    return idx


def central_time_derivative(u, t, stencil: int = 4) -> np.ndarray:
    """``du/dt`` along axis 1 by central differences of the given order.

    The two outermost columns fall back to second-order stencils.
    """
    ut = np.gradient(u, t, axis=1, edge_order=2)
    if stencil == 4 and u.shape[1] >= 5:
        h = np.diff(t)
        if np.allclose(h, h[0], rtol=1e-9, atol=0):
            ut[:, 2:-2] = (-u[:, 4:] + 8 * u[:, 3:-1] - 8 * u[:, 1:-3] + u[:, :-4]) / (12 * h[0])
    return ut


def boundary_projector(s, order: int) -> np.ndarray:
    """Orthogonal projector onto the complement of polynomials of degree < ``order`` in ``s``."""
    s = np.asarray(s, dtype=float)
    if order >= s.size:
        raise ValueError(f"need more than {order} frequencies to project out boundary terms")
    V = np.vander((s - s.mean()) / s.std(), order, increasing=True)
    Q, _ = np.linalg.qr(V)
    return np.eye(s.size) - Q @ Q.T


def _project_boundary(theta, s, order, q):
    P = boundary_projector(s, order)
    L = s.size
    blocks = theta.reshape(q, L, -1)
    return np.einsum("ab,qbj->qaj", P, blocks).reshape(q * L, -1)


def assemble_pde_library(
    field_: SpatioTemporalField, spec: LibrarySpec, freq: FrequencyGrid, opts: TransformOptions | None = None
) -> LaplaceLibrary:
    """Laplace library for a PDE, transforming along x.

    Pure x-derivatives use integration by parts along x.  Boundary values at
    the lower limit come from one-sided fits, from centered fits when
    ``x_margin`` moves the lower limit inside the domain, or are projected
    out with ``boundary="project"``.  Products are formed pointwise and
    transformed directly.

    With ``time_mode="derivative"`` each row block is one snapshot and
    ``u_t`` comes from central time differences.  With ``time_mode="window"``
    each block integrates the equation over ``time_window`` steps, so ``u_t``
    becomes ``U(t_b) - U(t_a)`` and no time derivative is taken;
    ``"cumulative"`` does the same with every window starting at ``t_1``.
    Windowed rows are labelled by their end time.
    Rows are ordered block-major, ``L`` frequencies per block.
    """
    opts = opts or TransformOptions(pde_axis="space")
    x = field_.xgrid
    dx = np.diff(x)
    if np.any(np.abs(dx - dx.mean()) > 1e-9 * dx.mean()):
        raise ValueError("PDE library needs a uniform x grid")
    terms = enumerate_terms(spec)
    t = field_.tgrid.t
    m = field_.tgrid.m
    windowed = opts.time_mode != "derivative"
    if windowed:
        if opts.time_window >= m:
            raise TooFewSnapshots(f"time window {opts.time_window} needs more than {m} snapshots")
        idx = np.arange(m)
        step = opts.snapshot_stride or max(1, opts.time_window // 2)
        if opts.time_mode == "window":
            starts = np.arange(0, m - opts.time_window, step)
            ends = starts + opts.time_window
        else:
            ends = np.arange(opts.time_window, m, step)
            starts = np.zeros_like(ends)
    else:
        margin = (opts.smooth_t // 2) if opts.smooth_t else opts.time_stencil // 2
        idx = snapshot_indices(m, opts.snapshot_stride, margin=margin)
    u = field_.values
    kmax = max([term.max_order(axis="x") for term in terms] + [1])
    dx_all = spatial_derivatives(field_, kmax, opts.smooth_x, opts.smooth_order)
    i0 = opts.x_margin
    if opts.boundary == "project":
        bnd_all = np.zeros((kmax, m))
    elif i0:
        bnd_all = centered_derivatives(u, x, i0, kmax)  # kmax x m
    else:
        bnd_all = initial_derivatives(u, x, kmax, opts.boundary_points, opts.boundary_degree)
    x, u, dx_all = x[i0:], u[i0:], [d[i0:] for d in dx_all]
    s = freq.s
    W = transform_weights(x, s, opts.scheme)
    U_all = W @ u  # L x m
    U = U_all[:, idx]
    if windowed:
        Ut = None
    elif opts.smooth_t:
        dt = float(t[1] - t[0])
        Ut = savgol_filter(U_all, opts.smooth_t, opts.smooth_order, deriv=1, delta=dt, axis=1)[:, idx]
        bnd_all = savgol_filter(bnd_all, opts.smooth_t, opts.smooth_order, axis=1)
    else:
        # the x-transform is linear, so differencing U in time equals
        # transforming the differenced field
        Ut = central_time_derivative(U_all, t, opts.time_stencil)[:, idx]
    bnd = bnd_all[:, idx].T  # q x kmax
    ut = None
    blocks = []
    for term in terms:
        f = term.single
        if f is not None and f.kind == "state":
            col = U
        elif f is not None and f.kind == "deriv" and f.axis == "t":
            col = Ut
        elif f is not None and f.kind == "deriv" and opts.use_ibp:
            k = f.order
            col = s[:, None] ** k * U - sum(s[:, None] ** (k - i - 1) * bnd[None, :, i] for i in range(k))
        else:
            row = np.ones((x.size, idx.size))
            for g in term.factors:
                if g.kind == "state":
                    row = row * u[:, idx]
                elif g.kind == "deriv" and g.axis == "x":
                    row = row * dx_all[g.order - 1][:, idx]
                elif g.kind == "deriv" and not windowed:
                    if ut is None:
                        ut = central_time_derivative(u, t, opts.time_stencil)
                    row = row * ut[:, idx]
                else:
                    raise ValueError(f"factor {g} is not supported in this PDE library")
            col = W @ row
        blocks.append(col)
    if windowed:
        b = ends
        integrals = cumulative_trapezoid(np.stack([c for c in blocks if c is not None]), t, axis=2, initial=0)
        out, j = [], 0
        for col in blocks:
            if col is None:
                out.append(U_all[:, b] - U_all[:, starts])
            else:
                out.append(integrals[j][:, b] - integrals[j][:, starts])
                j += 1
        blocks, tsel, label = out, t[b], b
    else:
        tsel, label = t[idx], idx
    theta = np.column_stack([c.T.reshape(-1) for c in blocks])  # block-major
    if opts.boundary == "project":
        theta = _project_boundary(theta, s, kmax, tsel.size)
    rows = [(float(sv), float(tv)) for tv in tsel for sv in s]
    return LaplaceLibrary(theta, terms, freq, rows, (field_.name,), {"snapshots": label})
