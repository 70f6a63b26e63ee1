"""Candidate-term library in the time domain.

A term is a multiset of factors drawn from ``{1, t, u_1..u_d, derivatives up
to order k}`` plus optional standalone forcing terms (impulse, step and
trigonometric/hyperbolic inputs).  Terms render to strings such as
``u*u_t`` or ``sin(3t)`` and parse back to the same descriptor.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from .errors import LibraryOverflow, NonUniformGrid, TooShort
from .sim import SpatioTemporalField, TimeSeriesSet, default_names

SPECIAL_KINDS = ("delta", "step", "sin", "cos", "sinh", "cosh")
_KIND_RANK = {"time": 0, "state": 1, "deriv": 2, "special": 3}


@dataclass(frozen=True)
class Factor:
    """One factor of a candidate term.

    ``kind`` is ``time``, ``state``, ``deriv`` or ``special``.  Derivatives
    carry an ``axis`` (``"t"`` or ``"x"``) and ``order >= 1``; specials carry
    ``special`` (one of :data:`SPECIAL_KINDS`) and ``param`` (``t0`` for
    delta/step, the angular frequency otherwise).
    """

    kind: str
    channel: int = 0
    order: int = 0
    axis: str = "t"
    special: str = ""
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_RANK:
            raise ValueError(f"unknown factor kind {self.kind!r}")
        if self.kind == "deriv" and self.order < 1:
            raise ValueError("derivative factors need order >= 1")
        if self.kind == "special" and self.special not in SPECIAL_KINDS:
            raise ValueError(f"unknown special {self.special!r}")
        if self.channel < 0:
            raise ValueError("channel must be nonnegative")

    @property
    def sort_key(self):
        axis_rank = 0 if self.axis == "t" else 1
        if self.kind == "deriv":
            return (2, axis_rank, self.order, self.channel, 0, 0.0)
        if self.kind == "special":
            return (3, 0, 0, 0, SPECIAL_KINDS.index(self.special), self.param)
        return (_KIND_RANK[self.kind], 0, 0, self.channel, 0, 0.0)

    def render(self, names) -> str:
        if self.kind == "time":
            return "t"
        if self.kind == "state":
            return names[self.channel]
        if self.kind == "deriv":
            return f"{names[self.channel]}_{self.axis * self.order}"
        p = _fmt(self.param)
        if self.special == "delta":
            return f"delta(t-{p})"
        if self.special == "step":
            return f"H(t-{p})"
        return f"{self.special}({'' if p == '1' else p}t)"


def _fmt(x: float) -> str:
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def special(kind: str, param: float) -> Factor:
    return Factor("special", special=kind, param=float(param))


TIME = Factor("time")


def state(channel: int = 0) -> Factor:
    return Factor("state", channel=channel)


def deriv(channel: int = 0, order: int = 1, axis: str = "t") -> Factor:
    return Factor("deriv", channel=channel, order=order, axis=axis)


@dataclass(frozen=True)
class TermDescriptor:
    """A candidate term as a sorted tuple of factors; ``()`` is the constant 1."""

    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(sorted(self.factors, key=lambda f: f.sort_key)))

    @property
    def degree(self) -> int:
        return len(self.factors)

    @property
    def sort_key(self):
        return (self.degree, tuple(f.sort_key for f in self.factors))

    @property
    def is_constant(self) -> bool:
        return not self.factors

    @property
    def single(self) -> Factor | None:
        return self.factors[0] if len(self.factors) == 1 else None

    @property
    def is_pure_derivative(self) -> bool:
        f = self.single
        return f is not None and f.kind == "deriv"

    @property
    def is_special(self) -> bool:
        f = self.single
        return f is not None and f.kind == "special"

    @property
    def has_delta(self) -> bool:
        return any(f.kind == "special" and f.special == "delta" for f in self.factors)

    def max_order(self, channel=None, axis="t") -> int:
        orders = [
            f.order
            for f in self.factors
            if f.kind == "deriv" and f.axis == axis and (channel is None or f.channel == channel)
        ]
        return max(orders, default=0)

    def render(self, names=("u",)) -> str:
        if not self.factors:
            return "1"
        parts = []
        for f, group in itertools.groupby(self.factors):
            count = len(list(group))
            text = f.render(names)
            parts.append(text if count == 1 else f"{text}^{count}")
        return "*".join(parts)

    def __str__(self):
        return self.render(default_names(1 + max((f.channel for f in self.factors), default=0)))


_SPECIAL_RE = re.compile(r"^(delta|H)\(t-([^)]+)\)$|^(sinh|cosh|sin|cos)\(([^)]*)t\)$")


def parse_factor(text: str, names) -> Factor:
    text = text.strip()
    if text == "t":
        return TIME
    if text in names:
        return state(list(names).index(text))
    m = _SPECIAL_RE.match(text)
    if m:
        if m.group(1):
            kind = "delta" if m.group(1) == "delta" else "step"
            return special(kind, float(m.group(2)))
        return special(m.group(3), float(m.group(4) or 1.0))
    for c, name in enumerate(names):
        prefix = f"{name}_"
        if text.startswith(prefix):
            rest = text[len(prefix):]
            if rest and set(rest) <= {"t"} or rest and set(rest) <= {"x"}:
                return deriv(c, len(rest), rest[0])
    raise ValueError(f"cannot parse factor {text!r}")


def parse_term(text: str, names=("u",)) -> TermDescriptor:
    """Inverse of :meth:`TermDescriptor.render`."""
    text = text.strip()
    if text == "1":
        return TermDescriptor(())
    factors = []
    for piece in text.split("*"):
        base, _, power = piece.partition("^")
        factors.extend([parse_factor(base, names)] * (int(power) if power else 1))
    return TermDescriptor(tuple(factors))


@dataclass(frozen=True)
class LibrarySpec:
    """Parameters of the candidate library.

    ``d`` channels, derivatives up to order ``k`` and products of up to ``n``
    factors.  ``specials`` are standalone forcing terms.  The remaining knobs
    prune the full tensor-product set the way prior system knowledge would:
    ``derivative_products=False`` keeps derivatives only as linear terms and
    ``exclude`` drops terms by their rendered names (rendered with ``names``).
    ``pde=True`` switches to the spatial library ``{u_t, u, u_x.., u*u_x..}``.
    """

    d: int = 1
    k: int = 1
    n: int = 1
    specials: tuple = ()
    include_constant: bool = True
    include_time: bool = True
    derivative_products: bool = True
    exclude: tuple = ()
    names: tuple = ()
    pde: bool = False
    max_terms: int = 10_000

    def __post_init__(self):
        if self.d < 1 or self.k < 0 or self.n < 1:
            raise ValueError("library needs d >= 1, k >= 0, n >= 1")
        for f in self.specials:
            if not isinstance(f, Factor) or f.kind != "special":
                raise ValueError("specials must be special factors")
        object.__setattr__(self, "specials", tuple(self.specials))
        object.__setattr__(self, "exclude", tuple(self.exclude))
        object.__setattr__(self, "names", tuple(self.names) or default_names(self.d))

    def base_factors(self) -> list:
        base = [TIME] + [state(c) for c in range(self.d)]
        base += [deriv(c, j) for j in range(1, self.k + 1) for c in range(self.d)]
        return base


def library_size(d: int, k: int, n: int) -> int:
    """Number of multisets of size ``n`` over ``kd + d + 2`` base functions."""
    return math.comb(k * d + d + n + 1, n)


def enumerate_terms(spec: LibrarySpec) -> list:
    """Ordered, duplicate-free candidate terms for ``spec``.

    Without pruning or specials the count is ``C(kd+d+n+1, n)``.  Ordering
    is by total degree, then lexicographic on the factors' base order
    ``t, u_1..u_d, u_1', .., u_d', u_1'', ..`` with specials last.
    """
    if spec.pde:
        return _enumerate_pde_terms(spec)
    expected = library_size(spec.d, spec.k, spec.n) + len(spec.specials)
    if expected > spec.max_terms:
        raise LibraryOverflow(f"library would have {expected} terms (cap {spec.max_terms})")
    options = [None] + spec.base_factors()  # None is the absorbing constant 1
    terms = []
    for combo in itertools.combinations_with_replacement(range(len(options)), spec.n):
        factors = tuple(options[i] for i in combo if i != 0)
        if not spec.derivative_products and len(factors) > 1 and any(f.kind == "deriv" for f in factors):
            continue
        terms.append(TermDescriptor(factors))
    terms += [TermDescriptor((f,)) for f in spec.specials]
    terms = sorted(set(terms), key=lambda term: term.sort_key)
    if not spec.include_constant:
        terms = [term for term in terms if not term.is_constant]
    if not spec.include_time:
        terms = [term for term in terms if not any(f.kind == "time" for f in term.factors)]
    if spec.exclude:
        drop = set(spec.exclude)
        terms = [term for term in terms if term.render(spec.names) not in drop]
    return terms


def _enumerate_pde_terms(spec: LibrarySpec) -> list:
    u = state(0)
    terms = [TermDescriptor((deriv(0, 1, "t"),)), TermDescriptor((u,))]
    terms += [TermDescriptor((deriv(0, j, "x"),)) for j in range(1, spec.k + 1)]
    for power in range(1, spec.n):
        terms += [TermDescriptor((u,) * power + (deriv(0, j, "x"),)) for j in range(1, spec.k + 1)]
    if spec.exclude:
        drop = set(spec.exclude)
        terms = [term for term in terms if term.render(spec.names) not in drop]
    if len(terms) > spec.max_terms:
        raise LibraryOverflow(f"library would have {len(terms)} terms (cap {spec.max_terms})")
    return terms


# ---------------------------------------------------------------------------
# Derivative estimation


def initial_derivatives(values, t, count: int, points: int | None = None, degree: int | None = None):
    """Derivatives of orders ``0..count-1`` at ``t[0]`` from a one-sided fit.

    ``values`` may be 2-D with samples along axis 0; each column is fitted.

    A polynomial of ``degree`` is least-squares fitted to the first ``points``
    samples; with ``points == degree + 1`` this is the exact one-sided finite
    difference stencil of that width.  Wider windows with a low degree
    smooth noisy data.
    """
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if count == 0:
        return np.zeros(0)
    if degree is None:
        degree = count + 7 if points is None else min(count + 7, points - 1)
    if points is None:
        points = degree + 1
    degree = max(degree, count - 1)
    if points < degree + 1 or points > values.shape[0]:
        raise TooShort(f"need {degree + 1} <= points <= {values.size} for the initial-value fit")
    scale = t[points - 1] - t[0]
    z = (t[:points] - t[0]) / scale
    coef = np.polynomial.polynomial.polyfit(z, values[:points], degree)
    return np.array([coef[j] * math.factorial(j) / scale**j for j in range(count)])


def centered_derivatives(values, t, index: int, count: int, half: int | None = None):
    """Derivatives of orders ``0..count-1`` at ``t[index]`` from a centered fit.

    Interpolates ``2 * half + 1`` samples around ``index`` with a polynomial of
    degree ``2 * half``; ``half`` defaults to ``index``.
    """
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    half = index if half is None else half
    if half < 1 or index - half < 0 or index + half >= values.shape[0]:
        raise TooShort(f"centered window of half-width {half} does not fit around index {index}")
    if 2 * half < count - 1:
        raise TooShort(f"half-width {half} is too small for {count} derivatives")
    sl = slice(index - half, index + half + 1)
    scale = t[index + half] - t[index]
    z = (t[sl] - t[index]) / scale
    coef = np.polynomial.polynomial.polyfit(z, values[sl], 2 * half)
    return np.array([coef[j] * math.factorial(j) / scale**j for j in range(count)])


def _first_derivative(v, t, axis=-1):
    return np.gradient(v, t, axis=axis, edge_order=2)


def estimate_derivatives(series: TimeSeriesSet, max_order: int, init_points=None, init_degree=None):
    """Finite-difference derivatives of every channel up to ``max_order``.

    Returns ``(derivs, initial)`` where ``derivs[j-1]`` is the ``d x m`` array
    of ``j``-th derivatives (second-order central differences inside,
    second-order one-sided at the ends, applied repeatedly) and
    ``initial[c, j]`` is the ``j``-th derivative of channel ``c`` at ``t_1``
    for ``j < max_order``.
    """
    m = series.grid.m
    if m < 2 * max_order + 2:
        raise TooShort(f"{m} samples cannot support derivatives of order {max_order}")
    if max_order > 1 and not series.grid.is_uniform():
        raise NonUniformGrid("derivatives above first order need a uniform grid")
    derivs = np.empty((max_order, series.d, m))
    current = series.states
    for j in range(max_order):
        current = _first_derivative(current, series.t)
        derivs[j] = current
    initial = np.array(
        [initial_derivatives(row, series.t, max_order, init_points, init_degree) for row in series.states]
    ).reshape(series.d, max_order)
    return derivs, initial


# ---------------------------------------------------------------------------
# Time-domain evaluation


@dataclass(frozen=True, eq=False)
class TimeLibrary:
    """Candidate terms evaluated on the sample grid.

    ``series[j]`` holds term ``j`` at every sample; terms with an impulse
    factor have no sampled representation and hold NaN.
    """

    data: TimeSeriesSet
    terms: list
    series: np.ndarray
    derivative_cache: np.ndarray
    initial_derivatives: np.ndarray
    names: tuple = field(default=())

    @property
    def grid(self):
        return self.data.grid

    def rendered(self) -> list:
        return [term.render(self.names) for term in self.terms]


def special_series(f: Factor, t, t1=None):
    """Time-domain samples of a forcing factor, measured from ``t1``."""
    t = np.asarray(t, dtype=float)
    t1 = t[0] if t1 is None else t1
    if f.special == "delta":
        raise ValueError("impulses have no sampled representation")
    if f.special == "step":
        return (t >= f.param).astype(float)
    fn = {"sin": np.sin, "cos": np.cos, "sinh": np.sinh, "cosh": np.cosh}[f.special]
    return fn(f.param * (t - t1))


def evaluate_factor(f: Factor, data: TimeSeriesSet, derivs) -> np.ndarray:
    if f.kind == "time":
        return data.t
    if f.kind == "state":
        return data.states[f.channel]
    if f.kind == "deriv":
        return derivs[f.order - 1, f.channel]
    return special_series(f, data.t)


def build_time_library(
    data: TimeSeriesSet,
    spec: LibrarySpec,
    terms=None,
    init_points=None,
    init_degree=None,
    initial_values=None,
) -> TimeLibrary:
    """Evaluate every candidate term on the samples of ``data``.

    ``initial_values`` (``d x k``) overrides the estimated derivatives at
    ``t_1`` used by the transform's boundary terms.
    """
    if data.d != spec.d:
        raise ValueError(f"library expects {spec.d} channels, data has {data.d}")
    terms = enumerate_terms(spec) if terms is None else list(terms)
    k = max([spec.k] + [term.max_order() for term in terms])
    if k > 0:
        derivs, initial = estimate_derivatives(data, k, init_points, init_degree)
    else:
        derivs, initial = np.empty((0, data.d, data.grid.m)), np.empty((data.d, 0))
    if initial_values is not None:
        initial = np.asarray(initial_values, dtype=float).reshape(data.d, -1)[:, :k]
    series = np.empty((len(terms), data.grid.m))
    for j, term in enumerate(terms):
        if term.has_delta:
            series[j] = np.nan
            continue
        row = np.ones(data.grid.m)
        for f in term.factors:
            row = row * evaluate_factor(f, data, derivs)
        series[j] = row
    names = data.names if data.names else spec.names
    return TimeLibrary(data, terms, series, derivs, initial, tuple(names))


def spatial_derivatives(
    field_: SpatioTemporalField, max_order: int, window: int = 0, polyorder: int = 4, stencil: int = 11
) -> np.ndarray:
    """``out[j-1]`` is the ``j``-th x-derivative of the field (``n x m``).

    ``window=0`` differentiates local interpolants through ``stencil`` points
    (falling back to repeated second-order differences on short grids); an
    odd ``window`` uses smoothing Savitzky-Golay derivatives of that width.
    """
    out = np.empty((max_order, field_.n, field_.tgrid.m))
    dx = float(field_.xgrid[1] - field_.xgrid[0])
    if window:
        for j in range(max_order):
            out[j] = savgol_filter(field_.values, window, max(polyorder, j + 1), deriv=j + 1, delta=dx, axis=0)
        return out
    if stencil and field_.n >= stencil and stencil - 1 >= max_order:
        for j in range(max_order):
            out[j] = savgol_filter(field_.values, stencil, stencil - 1, deriv=j + 1, delta=dx, axis=0)
        return out
    current = field_.values
    for j in range(max_order):
        current = _first_derivative(current, field_.xgrid, axis=0)
        out[j] = current
    return out
    current = field_.values
    for j in range(max_order):
        current = _first_derivative(current, field_.xgrid, axis=0)
        out[j] = current
    return out
