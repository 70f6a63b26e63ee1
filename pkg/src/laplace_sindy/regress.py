"""Per-pivot sequentially thresholded least squares over a Laplace library."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import AllZero, RankDeficient
from .laplace import LaplaceLibrary

OPTIMIZERS = ("stls",)


@dataclass(frozen=True)
class RegressionOptions:
    """``threshold`` acts on coefficients of unit-norm columns."""

    threshold: float = 0.01
    max_iters: int = 20
    rcond: float = 1e-13
    optimizer: str = "stls"
    rank_policy: str = "raise"

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.rank_policy not in ("raise", "drop"):
            raise ValueError("rank_policy must be 'raise' or 'drop'")


def lstsq_qr(A, b, rcond=1e-13, policy="raise"):
    """Least squares via QR with column pivoting.

    When a pivot of ``R`` falls below ``rcond`` times the largest one,
    ``policy="raise"`` raises :class:`RankDeficient`; ``"drop"`` returns the
    basic solution that sets the trailing dependent columns to zero.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[1] == 0:
        return np.zeros(0)
    Q, R, perm = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rcond * diag[0])) if diag.size else 0
    if rank < A.shape[1]:
        if policy != "drop" or rank == 0:
            raise RankDeficient(f"numerical rank {rank} below {A.shape[1]} at rcond={rcond:g}")
    x = np.zeros(A.shape[1])
    x[perm[:rank]] = solve_triangular(R[:rank, :rank], (Q.T @ b)[:rank])
    return x


def stls(A, b, opts: RegressionOptions | None = None, active=None) -> np.ndarray:
    """Sequentially thresholded least squares.

    Alternates a least-squares solve on the active columns with zeroing of
    coefficients smaller than ``opts.threshold`` until the active set stops
    changing or ``max_iters`` is reached.  Inactive entries are exact zeros.
    """
    opts = opts or RegressionOptions()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    active = np.ones(A.shape[1], dtype=bool) if active is None else np.asarray(active, dtype=bool).copy()
    if not active.any():
        raise AllZero("no active columns")
    coef = np.zeros(A.shape[1])
    for _ in range(opts.max_iters):
        coef = np.zeros(A.shape[1])
        coef[active] = lstsq_qr(A[:, active], b, opts.rcond, opts.rank_policy)
        keep = active & (np.abs(coef) >= opts.threshold)
        if not keep.any():
            raise AllZero(f"every coefficient fell below {opts.threshold:g}")
        if np.array_equal(keep, active):
            break
        active = keep
    else:
        coef = np.zeros(A.shape[1])
        coef[active] = lstsq_qr(A[:, active], b, opts.rcond, opts.rank_policy)
    coef[~active] = 0.0
    return coef


@dataclass(frozen=True, eq=False)
class SparseModel:
    """Implicit equation ``sum_j xi[j] * term_j = 0`` with ``xi[pivot] == 1``."""

    pivot: int
    xi: np.ndarray
    active: np.ndarray
    residual_norm: float
    terms: list = field(default_factory=list)
    names: tuple = ("u",)

    @property
    def p(self) -> int:
        return int(self.active.sum())

    def coefficient(self, rendered: str) -> float:
        for term, c in zip(self.terms, self.xi):
            if term.render(self.names) == rendered:
                return float(c)
        raise KeyError(rendered)

    def coefficients(self) -> dict:
        """Active terms (rendered) mapped to their coefficients."""
        return {self.terms[j].render(self.names): float(self.xi[j]) for j in np.flatnonzero(self.active)}

    def render(self, digits: int = 3) -> str:
        order = [self.pivot] + [j for j in np.flatnonzero(self.active) if j != self.pivot]
        return render_equation([(self.terms[j].render(self.names), self.xi[j]) for j in order], digits)


def render_equation(pairs, digits: int = 3) -> str:
    parts = []
    for i, (name, c) in enumerate(pairs):
        mag = abs(c)
        text = name if np.isclose(mag, 1.0, rtol=0, atol=10.0**-digits / 2) and i == 0 else f"{mag:.{digits}f}*{name}"
        if i == 0:
            parts.append(("-" if c < 0 else "") + text)
        else:
            parts.append(("- " if c < 0 else "+ ") + text)
    return " ".join(parts) + " = 0"


@dataclass
class PivotFits:
    models: list
    failures: dict
    column_norms: np.ndarray


def fit_all_pivots(lib: LaplaceLibrary, opts: RegressionOptions | None = None, pivots=None) -> PivotFits:
    """Fix each term's coefficient to 1 in turn and regress it on the rest.

    Columns (and the pivot column) are scaled to unit norm before
    thresholding; coefficients are returned on the original scale with the
    sign flipped so the model reads ``theta @ xi = 0``.  Pivots whose
    regression fails are recorded in ``failures`` instead of raising.
    """
    opts = opts or RegressionOptions()
    theta = lib.theta
    norms = np.linalg.norm(theta, axis=0)
    usable = norms > 0
    scaled = np.zeros_like(theta)
    scaled[:, usable] = theta[:, usable] / norms[usable]
    dim = theta.shape[1]
    models, failures = [], {}
    for i in range(dim) if pivots is None else pivots:
        if not usable[i]:
            failures[i] = "zero column"
            continue
        others = np.array([j for j in range(dim) if j != i and usable[j]], dtype=int)
        try:
            z = stls(scaled[:, others], scaled[:, i], opts)
        except (AllZero, RankDeficient) as exc:
            failures[i] = f"{type(exc).__name__}: {exc}"
            continue
        xi = np.zeros(dim)
        xi[others] = -z * norms[i] / norms[others]
        xi[i] = 1.0
        active = xi != 0
        models.append(SparseModel(i, xi, active, float(np.linalg.norm(theta @ xi)), list(lib.terms), lib.names))
    return PivotFits(models, failures, norms)
