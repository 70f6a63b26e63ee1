"""Model scoring by re-simulation, corrected AIC, selection and canonical forms."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateSampleSize,
    Diverged,
    EmptySelection,
    MissingInitialValues,
    NonFinite,
    NotExplicitlySolvable,
    SingularDerivativeBlock,
    ZeroVariance,
)
from .library import special_series
from .regress import SparseModel, render_equation
from .sim import integrate_piecewise

PERFECT_FIT = -math.inf
PRUNE_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class ScoredModel:
    """A candidate with its scores.

    ``status`` is ``ok``, ``perfect`` (zero residual, ranks first),
    ``diverged`` or ``unsolvable`` (both rank last with ``aicc = +inf``).
    """

    model: SparseModel
    log_rmse: float
    aicc: float
    p: int
    prediction: np.ndarray | None = None
    status: str = "ok"
    space: str = "time"

    @property
    def pivot(self) -> int:
        return self.model.pivot


# ---------------------------------------------------------------------------
# Explicit form of an implicit scalar equation


def _factor_value(f, t, y, t1):
    if f.kind == "time":
        return t
    if f.kind == "state":
        return y[0]
    if f.kind == "deriv":
        return y[f.order]
    return float(special_series(f, np.array([t]), t1)[0])


def _term_value(factors, t, y, t1):
    v = 1.0
    for f in factors:
        v = v * _factor_value(f, t, y, t1)
    return v


@dataclass(frozen=True)
class ExplicitForm:
    """``u^(order) = -rest / lead`` with ``lead`` and ``rest`` sums of terms.

    ``lead`` pairs a coefficient with the remaining factors of a term once
    one copy of ``u^(order)`` is divided out; ``impulses`` hold ``(t0, c)``
    for standalone impulse terms.
    """

    order: int
    lead: tuple
    rest: tuple
    impulses: tuple
    t1: float = 0.0

    def lead_value(self, t, y):
        return sum(c * _term_value(fs, t, y, self.t1) for c, fs in self.lead)

    def rhs(self, t, y):
        g = self.lead_value(t, y)
        r = sum(c * _term_value(fs, t, y, self.t1) for c, fs in self.rest)
        out = np.empty_like(y)
        out[:-1] = y[1:]
        out[-1] = -r / g if g != 0 else np.nan
        return out


def explicit_form(model: SparseModel, t1: float = 0.0) -> ExplicitForm:
    """Isolate the highest time derivative of a single-channel model.

    Raises :class:`NotExplicitlySolvable` when no active term carries a
    derivative or the highest derivative appears nonlinearly.
    """
    active = [(model.terms[j], float(model.xi[j])) for j in np.flatnonzero(model.active)]
    order = 0
    for term, _ in active:
        for f in term.factors:
            if f.kind == "deriv" and f.axis == "t":
                if f.channel != 0:
                    raise NotExplicitlySolvable("multi-channel model needs canonicalization first")
                order = max(order, f.order)
    if order == 0:
        raise NotExplicitlySolvable("no derivative term is active")
    lead, rest, impulses = [], [], []
    for term, c in active:
        hits = [i for i, f in enumerate(term.factors) if f.kind == "deriv" and f.order == order]
        if len(hits) > 1:
            raise NotExplicitlySolvable(f"{term.render(model.names)} is nonlinear in the highest derivative")
        if hits:
            fs = tuple(f for i, f in enumerate(term.factors) if i != hits[0])
            lead.append((c, fs))
        elif term.has_delta:
            impulses.append((term.single.param, c))
        else:
            rest.append((c, term.factors))
    return ExplicitForm(order, tuple(lead), tuple(rest), tuple(sorted(impulses)), t1)


def normalize_to_leading(model: SparseModel) -> SparseModel:
    """Rescale so the isolated highest derivative has coefficient 1.

    Models whose leading term is not a pure derivative are returned as is.
    """
    try:
        form = explicit_form(model)
    except NotExplicitlySolvable:
        return model
    idx = [
        j
        for j in np.flatnonzero(model.active)
        if model.terms[j].is_pure_derivative and model.terms[j].single.order == form.order
    ]
    if not idx:
        return model
    j = idx[0]
    xi = model.xi / model.xi[j]
    return SparseModel(j, xi, model.active.copy(), model.residual_norm / abs(model.xi[j]), model.terms, model.names)


def resimulate(model: SparseModel, ic, grid, substeps: int = 4) -> np.ndarray:
    """Integrate the identified scalar equation from ``ic = (u, u', ...)``.

    Returns the trajectory of ``u`` on ``grid``.  Impulse terms act as a
    jump of ``-c / lead`` in the highest integrated derivative.
    """
    t = grid.t if hasattr(grid, "t") else np.asarray(grid, dtype=float)
    t1 = float(t[0])
    form = explicit_form(model, t1)
    ic = np.atleast_1d(np.asarray(ic, dtype=float))
    if ic.size < form.order:
        raise MissingInitialValues(f"order-{form.order} model needs {form.order} initial values")
    pieces = [(t1, form.rhs, None)]
    for t0, c in form.impulses:

        def jump(y, c=c, t0=t0):
            y = y.copy()
            y[-1] += -c / form.lead_value(t0, y)
            return y

        pieces.append((t0, form.rhs, jump))
    try:
        with np.errstate(all="ignore"):
            out = integrate_piecewise(pieces, ic[: form.order], t, substeps)
    except NonFinite as exc:
        raise Diverged(str(exc)) from None
    return out[:, 0]


# ---------------------------------------------------------------------------
# Scores


def log_rmse(truth, prediction) -> float:
    """``ln sqrt(mean_j ||u(t_j) - u~(t_j)||^2)``; ``-inf`` for an exact match."""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    prediction = np.atleast_2d(np.asarray(prediction, dtype=float))
    if truth.shape != prediction.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {prediction.shape}")
    if not np.all(np.isfinite(prediction)):
        raise Diverged("prediction is not finite")
    sq = np.sum((truth - prediction) ** 2)
    if sq == 0:
        return PERFECT_FIT
    return 0.5 * math.log(sq / truth.shape[-1])


def aicc(model, truth, prediction) -> float:
    """Corrected AIC with ``sigma^2 = SSE / m`` over all residuals.

    ``model`` may be a :class:`SparseModel` or the parameter count ``p``.
    """
    p = model if isinstance(model, (int, np.integer)) else model.p
    resid = np.asarray(truth, dtype=float) - np.asarray(prediction, dtype=float)
    return aicc_from_residuals(p, resid)


def aicc_from_residuals(p: int, resid) -> float:
    resid = np.ravel(resid)
    m = resid.size
    if m <= p + 2:
        raise DegenerateSampleSize(f"m={m} must exceed p+2={p + 2}")
    sse = float(resid @ resid)
    if sse == 0:
        raise ZeroVariance("residuals are identically zero")
    sigma2 = sse / m
    aic = 2 * p + m * math.log(2 * math.pi * sigma2) + sse / sigma2
    return aic + 2 * (p + 1) * (p + 2) / (m - p - 2)


def _rank_key(sm: ScoredModel):
    a = sm.aicc
    if math.isnan(a):
        a = math.inf
    return (a, sm.p, sm.pivot)


def select_best(scored) -> ScoredModel:
    """Lowest AICc, then fewer active terms, then lower pivot index."""
    scored = list(scored)
    if not scored:
        raise EmptySelection("no candidates to select from")
    return min(scored, key=_rank_key)


def rank(scored) -> list:
    return sorted(scored, key=_rank_key)


def score_by_resimulation(model: SparseModel, truth, ic, grid, substeps: int = 4) -> ScoredModel:
    """Re-simulate and score against the measured trajectory of ``u``."""
    truth = np.asarray(truth, dtype=float)
    try:
        pred = resimulate(model, ic, grid, substeps)
    except NotExplicitlySolvable:
        return ScoredModel(model, math.nan, math.inf, model.p, None, "unsolvable")
    except Diverged:
        return ScoredModel(model, math.inf, math.inf, model.p, None, "diverged")
    try:
        value = aicc(model, truth, pred)
    except ZeroVariance:
        return ScoredModel(model, PERFECT_FIT, PERFECT_FIT, model.p, pred, "perfect")
    with np.errstate(over="ignore"):
        err = log_rmse(truth, pred)
    if not math.isfinite(value):
        return ScoredModel(model, err, math.inf, model.p, pred, "diverged")
    return ScoredModel(model, err, value, model.p, pred)


def laplace_residual(model: SparseModel, theta) -> np.ndarray:
    """``theta @ xi`` scaled by the pivot column norm (scale free)."""
    theta = np.asarray(theta, dtype=float)
    return theta @ model.xi / np.linalg.norm(theta[:, model.pivot])


def score_by_laplace_residual(model: SparseModel, theta) -> ScoredModel:
    """AICc over the Laplace-domain rows instead of a time trajectory."""
    r = laplace_residual(model, theta)
    try:
        value = aicc_from_residuals(model.p, r)
    except ZeroVariance:
        return ScoredModel(model, PERFECT_FIT, PERFECT_FIT, model.p, None, "perfect", "laplace")
    err = 0.5 * math.log(float(r @ r) / r.size)
    return ScoredModel(model, err, value, model.p, None, "ok", "laplace")


# ---------------------------------------------------------------------------
# Coupled systems


@dataclass(frozen=True, eq=False)
class CanonicalSystem:
    """``coef[j] @ terms = 0`` with unit coefficient on channel ``j``'s derivative."""

    terms: list
    coef: np.ndarray
    names: tuple
    derivative_columns: tuple = field(default=())

    @property
    def d(self) -> int:
        return self.coef.shape[0]

    def equation(self, j: int) -> dict:
        return {self.terms[i].render(self.names): float(c) for i, c in enumerate(self.coef[j]) if c != 0}

    def support(self, j: int) -> set:
        return set(self.equation(j))

    def render(self, digits: int = 3) -> list:
        out = []
        for j in range(self.d):
            lead = self.derivative_columns[j]
            order = [lead] + [i for i in np.flatnonzero(self.coef[j]) if i != lead]
            out.append(render_equation([(self.terms[i].render(self.names), self.coef[j, i]) for i in order], digits))
        return out

    def as_models(self) -> list:
        return [
            SparseModel(self.derivative_columns[j], self.coef[j].copy(), self.coef[j] != 0, math.nan, self.terms, self.names)
            for j in range(self.d)
        ]


def derivative_columns(terms, d: int) -> list:
    """Index of the pure first time-derivative term of each channel."""
    cols = []
    for c in range(d):
        hit = [
            i
            for i, term in enumerate(terms)
            if term.is_pure_derivative and term.single.channel == c and term.single.order == 1 and term.single.axis == "t"
        ]
        if not hit:
            raise SingularDerivativeBlock(f"library has no first derivative of channel {c}")
        cols.append(hit[0])
    return cols


def canonicalize(models, d: int | None = None, prune: float = PRUNE_TOL, cond_limit: float = 1e12) -> CanonicalSystem:
    """Eliminate so equation ``j`` reads ``u_j' + ... = 0`` with no other derivative.

    Coefficients below ``prune`` in magnitude are set to zero afterwards.
    """
    models = list(models)
    d = len(models) if d is None else d
    if len(models) != d:
        raise ValueError(f"need {d} equations, got {len(models)}")
    terms, names = models[0].terms, models[0].names
    C = np.array([m.xi for m in models], dtype=float)
    cols = derivative_columns(terms, d)
    B = C[:, cols]
    if not np.array_equal(B, np.eye(d)):
        if not np.all(np.isfinite(B)) or np.linalg.matrix_rank(B) < d or np.linalg.cond(B) > cond_limit:
            raise SingularDerivativeBlock("derivative coefficient block is singular")
        C = np.linalg.solve(B, C)
    C[np.abs(C) < prune] = 0.0
    C[:, cols] = np.eye(d)
    return CanonicalSystem(list(terms), C, tuple(names), tuple(cols))


def _system_rhs(system: CanonicalSystem, t1: float):
    cols = system.derivative_columns
    rows = []
    for j in range(system.d):
        rows.append([(float(c), system.terms[i].factors) for i, c in enumerate(system.coef[j]) if c != 0 and i != cols[j]])
    for j, row in enumerate(rows):
        for _, fs in row:
            if any(f.kind == "deriv" or f.kind == "special" and f.special == "delta" for f in fs):
                raise NotExplicitlySolvable(f"equation {j} keeps a derivative or impulse after elimination")

    def value(fs, t, y):
        v = 1.0
        for f in fs:
            if f.kind == "time":
                v = v * t
            elif f.kind == "state":
                v = v * y[f.channel]
            else:
                v = v * float(special_series(f, np.array([t]), t1)[0])
        return v

    def rhs(t, y):
        return np.array([-sum(c * value(fs, t, y) for c, fs in row) for row in rows])

    return rhs


def resimulate_system(system: CanonicalSystem, ic, grid, substeps: int = 1) -> np.ndarray:
    """Integrate a canonical first-order system; returns ``d x m``."""
    t = grid.t if hasattr(grid, "t") else np.asarray(grid, dtype=float)
    rhs = _system_rhs(system, float(t[0]))
    try:
        with np.errstate(all="ignore"):
            out = integrate_piecewise([(t[0], rhs, None)], np.asarray(ic, dtype=float), t, substeps)
    except NonFinite as exc:
        raise Diverged(str(exc)) from None
    return out.T


@dataclass(frozen=True, eq=False)
class SystemChoice:
    system: CanonicalSystem
    members: tuple
    aicc: float
    p: int


def rank_systems(models, theta, d: int) -> list:
    """Every ``d``-subset of pivot models scored as a canonical system.

    Subsets with a singular derivative block are skipped.  Each canonical
    equation is scored on the Laplace residual and a subset's score is the
    summed AICc.  Sorted best first (ties: fewer terms, then lower pivots).
    """
    models = list(models)
    if len(models) < d:
        raise EmptySelection(f"{len(models)} models cannot form a {d}-equation system")
    theta = np.asarray(theta, dtype=float)
    keyed = []
    for combo in itertools.combinations(range(len(models)), d):
        try:
            system = canonicalize([models[i] for i in combo], d)
        except SingularDerivativeBlock:
            continue
        total, p = 0.0, 0
        for eq in system.as_models():
            sm = score_by_laplace_residual(replace_active(eq), theta)
            total += sm.aicc
            p += eq.p
        key = (total, p, tuple(models[i].pivot for i in combo))
        keyed.append((key, SystemChoice(system, tuple(models[i] for i in combo), total, p)))
    if not keyed:
        raise EmptySelection("no combination has a nonsingular derivative block")
    keyed.sort(key=lambda kv: kv[0])
    return [choice for _, choice in keyed]


def select_system(models, theta, d: int, names=None) -> SystemChoice:
    """Best combination of ``d`` pivot models for a coupled system (see :func:`rank_systems`)."""
    return rank_systems(models, theta, d)[0]


def replace_active(model: SparseModel) -> SparseModel:
    return replace(model, active=model.xi != 0)


