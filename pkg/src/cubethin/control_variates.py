"""Control variates and the weighting scheme they induce.

Given control variates ``h_1..h_J`` (functions with zero expectation under
the target), the regression estimate of ``p(f)`` is a weighted average
``sum_n w_n f(X_n)`` with weights ``w = H (H^t H)^{-1} e_1`` that do not
depend on ``f``. ``H`` is the design matrix ``[1, h_1(X), ..., h_J(X)]``.

The weights are characterised by ``w in span(H)`` and ``H^t w = e_1``: they
sum to one and every control variate has weighted sum zero.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import numerics
from .errors import DimensionMismatch, MissingScores, RankDeficient
from .samplers import TruncatedNormalTarget, truncnorm_mean

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-8


@dataclass
class Chain:
    """MCMC output: ``states`` (N, d) and optional ``scores`` = grad log p at each state."""

    states: np.ndarray
    scores: np.ndarray = None
    burn_in: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise DimensionMismatch(f"states must be (N, d) with N, d >= 1, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("states contain non-finite values")
        self.states = states
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=float)
            if scores.ndim == 1:
                scores = scores[:, None]
            if scores.shape != states.shape:
                raise DimensionMismatch(f"scores {scores.shape} differ from states {states.shape}")
            if not np.all(np.isfinite(scores)):
                raise ValueError("scores contain non-finite values")
            self.scores = scores
        if self.burn_in < 0 or self.burn_in >= states.shape[0]:
            raise ValueError(f"burn_in must lie in [0, N), got {self.burn_in}")

    @property
    def N(self):
        return self.states.shape[0]

    @property
    def d(self):
        return self.states.shape[1]

    @property
    def has_scores(self):
        return self.scores is not None

    def after_burnin(self, b=None):
        """Chain without its first ``b`` states (default: ``self.burn_in``)."""
        b = self.burn_in if b is None else int(b)
        if not 0 <= b < self.N:
            raise ValueError(f"burn-in {b} outside [0, {self.N})")
        scores = None if self.scores is None else self.scores[b:]
        return Chain(self.states[b:], scores)


def independent_columns(values, eps=numerics.RANK_EPS):
    """Mask of control-variate columns that are independent given the constant.

    Columns are centred and scaled to unit norm (this only affects the rank
    decision), then a column-pivoted QR picks a maximal independent subset.
    """
    values = np.asarray(values, dtype=float)
    n, J = values.shape
    centred = values - values.mean(axis=0)
    norms = np.linalg.norm(centred, axis=0)
    raw = np.linalg.norm(values, axis=0)
    alive = norms > eps * max(n, J + 1) * np.maximum(raw, 1e-300)
    mask = np.zeros(J, dtype=bool)
    if not alive.any():
        return mask
    cols = np.flatnonzero(alive)
    _, R, piv = linalg.qr(centred[:, cols] / norms[cols], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.count_nonzero(diag > numerics.rank_cutoff((n, J + 1), diag[0], eps)))
    mask[cols[piv[:rank]]] = True
    return mask


@dataclass
class ControlVariateMatrix:
    """Evaluations ``values[n, j] = h_j(X_n)``.

    The independence check runs at construction; ``independent`` marks a
    maximal subset of columns that, together with the constant, has full
    column rank.
    """

    values: np.ndarray
    labels: list = None
    chain: Chain = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise DimensionMismatch("control variates must form an (N, J) matrix with J >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("control variates contain non-finite values")
        self.values = values
        if self.labels is None:
            self.labels = [f"h{j}" for j in range(values.shape[1])]
        if len(self.labels) != values.shape[1]:
            raise DimensionMismatch("one label per column required")
        if self.chain is not None and self.chain.N != values.shape[0]:
            raise DimensionMismatch("control variates and chain differ in length")
        self.independent = independent_columns(values)

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def J(self):
        return self.values.shape[1]

    @property
    def rank(self):
        return int(self.independent.sum())

    @property
    def is_full_rank(self):
        return bool(self.independent.all())

    def reduced(self):
        """Only the independent columns."""
        if self.is_full_rank:
            return self
        keep = self.independent
        return ControlVariateMatrix(
            self.values[:, keep], [l for l, k in zip(self.labels, keep) if k], self.chain
        )


@dataclass
class WeightedSample:
    weights: np.ndarray
    chain: Chain = field(default=None, repr=False)
    cv: ControlVariateMatrix = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")

    def constraint_residuals(self):
        """``sum_n w_n h_j(X_n)`` for every column, scaled by ``1 + max|h_j|``."""
        h = self.cv.values
        return (self.weights @ h) / (1.0 + np.abs(h).max(axis=0))


def _require_scores(chain):
    if not chain.has_scores:
        raise MissingScores("gradient control variates need the chain's score vectors")


def score_cv_full(chain):
    """``d`` score columns ``s[i]`` then ``d^2`` columns ``1{i=j} + x[i] s[j]`` (row-major in i, j)."""
    _require_scores(chain)
    x, s = chain.states, chain.scores
    d = chain.d
    quad = x[:, :, None] * s[:, None, :] + np.eye(d)[None]
    values = np.concatenate([s, quad.reshape(chain.N, d * d)], axis=1)
    labels = [f"score[{i}]" for i in range(d)]
    labels += [f"x[{i}]*score[{j}]" + ("+1" if i == j else "") for i in range(d) for j in range(d)]
    return ControlVariateMatrix(values, labels, chain)


def score_cv_diagonal(chain):
    """``d`` score columns then the ``d`` diagonal terms ``1 + x[i] s[i]``."""
    _require_scores(chain)
    x, s = chain.states, chain.scores
    values = np.concatenate([s, 1.0 + x * s], axis=1)
    labels = [f"score[{i}]" for i in range(chain.d)] + [f"x[{i}]*score[{i}]+1" for i in range(chain.d)]
    return ControlVariateMatrix(values, labels, chain)


def gibbs_cv_truncnorm(chain, mu, Sigma, form="increment"):
    """Control variates from the conditional expectations of the random-scan Gibbs sampler.

    With a uniformly chosen coordinate per update,
    ``E[X_n[i] | X_{n-1} = x] = m_i(x) / d + (1 - 1/d) x[i]`` where ``m_i``
    is the mean of the truncated full conditional.

    Parameters
    ----------
    form : {"increment", "state"}
        ``"increment"``: ``X_n[i] - E[X_n[i] | X_{n-1}]``, first row zero.
        ``"state"``: ``E[X_{n+1}[i] | X_n] - X_n[i] = (m_i(X_n) - X_n[i]) / d``,
        a function of the current state only, which also has mean zero
        under the target.
    """
    if form not in ("increment", "state"):
        raise ValueError("form must be 'increment' or 'state'")
    target = TruncatedNormalTarget(mu, Sigma)
    if target.dim != chain.d:
        raise DimensionMismatch(f"target has dimension {target.dim}, chain {chain.d}")
    x = chain.states
    d = chain.d
    if form == "state":
        m = truncnorm_mean(target.cond_means(x), target.cond_sd)
        values = (m - x) / d
        return ControlVariateMatrix(values, [f"gibbs_state[{i}]" for i in range(d)], chain)
    prev = x[:-1]
    m = truncnorm_mean(target.cond_means(prev), target.cond_sd)
    expect = m / d + (1.0 - 1.0 / d) * prev
    values = np.zeros_like(x)
    values[1:] = x[1:] - expect
    return ControlVariateMatrix(values, [f"gibbs[{i}]" for i in range(d)], chain)


def _design(cv, on_redundant):
    if on_redundant not in ("drop", "raise"):
        raise ValueError("on_redundant must be 'drop' or 'raise'")
    keep = cv.independent
    if not keep.all():
        dropped = [l for l, k in zip(cv.labels, keep) if not k]
        if on_redundant == "raise":
            raise RankDeficient(f"redundant control variates: {dropped}")
        logger.info("dropping %d redundant control variates: %s", len(dropped), dropped)
    h = cv.values[:, keep]
    if cv.N <= h.shape[1] + 1:
        raise RankDeficient(f"N={cv.N} too small for {h.shape[1]} control variates")
    return keep, h


def cv_weights(cv, on_redundant="drop"):
    """Control-variate weights ``w = H (H^t H)^{-1} e_1``.

    Evaluated as ``w = Q R^{-t} e_1`` from a QR factorisation of ``H`` with
    columns rescaled to unit max-norm (rescaling leaves ``w`` unchanged).
    Redundant columns are dropped by default; their constraints still hold
    whenever they are consistent with the others, which is verified.

    Raises
    ------
    RankDeficient
        With ``on_redundant="raise"`` if any column is redundant, or if the
        constraints are mutually inconsistent (e.g. a nonzero constant column).
    """
    keep, h = _design(cv, on_redundant)
    scale = np.abs(h).max(axis=0) if h.size else np.ones(0)
    H = np.column_stack([np.ones(cv.N), h / scale])
    Q, R = np.linalg.qr(H)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] < numerics.rank_cutoff(H.shape, sv[0]):
        raise RankDeficient("design matrix is rank deficient")
    e1 = np.zeros(H.shape[1])
    e1[0] = 1.0
    z = linalg.solve_triangular(R, e1, trans="T")
    w = Q @ z
    ws = WeightedSample(w, cv.chain, cv)
    bad = np.abs(ws.constraint_residuals()) > CONSTRAINT_TOL
    if bad.any():
        raise RankDeficient(
            "control variates are inconsistent with the constant column: "
            + ", ".join(l for l, b in zip(cv.labels, bad) if b)
        )
    return ws


def weighted_estimate(ws, f_values):
    """``sum_n w_n f(X_n)``."""
    f_values = np.asarray(f_values, dtype=float)
    if f_values.shape != ws.weights.shape:
        raise DimensionMismatch(f"f has shape {f_values.shape}, weights {ws.weights.shape}")
    return float(ws.weights @ f_values)


def beta_ols(cv, f_values, on_redundant="drop"):
    """Regression coefficients of ``f`` on the control variates (intercept excluded).

    Dropped redundant columns get coefficient zero.
    """
    f_values = np.asarray(f_values, dtype=float)
    if f_values.shape != (cv.N,):
        raise DimensionMismatch("f_values must have one entry per state")
    keep, h = _design(cv, on_redundant)
    gamma = numerics.ols(np.column_stack([np.ones(cv.N), h]), f_values)
    beta = np.zeros(cv.J)
    beta[keep] = gamma[1:]
    return beta
