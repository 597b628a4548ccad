"""Desk-scale targets and chain generators.

The main piece is a random-scan Gibbs sampler for a multivariate normal
truncated to the positive orthant. Each update draws one coordinate from
its univariate truncated-normal full conditional. A Gaussian AR(1) chain
with exact invariant law is provided as a cheap stand-in for MCMC output
when the score function is needed.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from . import _backend
from .errors import DimensionMismatch

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class TruncatedNormalTarget:
    """``N(mu, Sigma)`` restricted to ``[0, inf)^d``."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        d = self.mu.size
        if self.Sigma.shape != (d, d):
            raise DimensionMismatch(f"Sigma must be {d}x{d}, got {self.Sigma.shape}")
        if not np.allclose(self.Sigma, self.Sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.Sigma).max())):
            raise ValueError("Sigma is not symmetric")
        if np.linalg.eigvalsh(self.Sigma).min() <= 0:
            raise ValueError("Sigma is not positive definite")
        self.precision = np.linalg.inv(self.Sigma)
        self.precision = 0.5 * (self.precision + self.precision.T)

    @property
    def dim(self):
        return self.mu.size

    @property
    def cond_sd(self):
        return 1.0 / np.sqrt(np.diag(self.precision))

    def cond_means(self, X):
        """Untruncated conditional mean of every coordinate given the others.

        ``X`` has shape (n, d); the result has the same shape, entry (n, i)
        being ``E[x_i | x_{-i} = X[n, -i]]``.
        """
        X = np.atleast_2d(X)
        Q = self.precision
        return X - ((X - self.mu) @ Q) / np.diag(Q)


@dataclass
class GibbsChain:
    states: np.ndarray
    seed: object
    target: TruncatedNormalTarget

    def to_chain(self):
        from .control_variates import Chain

        return Chain(self.states)


def random_spd(d, seed):
    """Gram matrix ``M^T M`` of a d x d standard-normal matrix."""
    if d < 1:
        raise ValueError("d must be positive")
    rng = as_generator(seed)
    M = rng.standard_normal((d, d))
    Sigma = M.T @ M
    if np.linalg.eigvalsh(Sigma).min() <= 0:
        Sigma = Sigma + 1e-9 * np.eye(d)
    return Sigma


def random_truncnorm_target(d, seed):
    """Standard-normal mean and ``random_spd`` covariance from one stream."""
    rng = as_generator(seed)
    mu = rng.standard_normal(d)
    return TruncatedNormalTarget(mu, random_spd(d, rng))


def gaussian_score(mu, Sigma_inv, x):
    """Score ``-Sigma^{-1}(x - mu)`` of a Gaussian; ``x`` may be (d,) or (n, d)."""
    mu = np.asarray(mu, dtype=float)
    Sigma_inv = np.atleast_2d(np.asarray(Sigma_inv, dtype=float))
    x = np.asarray(x, dtype=float)
    d = mu.size
    if Sigma_inv.shape != (d, d) or x.shape[-1] != d:
        raise DimensionMismatch("mu, Sigma_inv and x disagree on dimension")
    return -(x - mu) @ Sigma_inv.T


def cond_params(target, x, i):
    """Mean and standard deviation of coordinate ``i`` given the rest (untruncated)."""
    x = np.asarray(x, dtype=float)
    Q = target.precision
    m = x[i] - (Q[i] @ (x - target.mu)) / Q[i, i]
    return float(m), float(1.0 / np.sqrt(Q[i, i]))


def truncnorm_mean(m, s):
    """Mean of ``N(m, s^2)`` truncated to ``[0, inf)``.

    Uses ``phi(a) / (1 - Phi(a)) = sqrt(2/pi) / erfcx(a / sqrt(2))`` with
    ``a = -m/s``, which stays finite deep in either tail.
    """
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    a = -m / s
    out = m + s * _SQRT_2_OVER_PI / special.erfcx(a / np.sqrt(2.0))
    return out if out.ndim else float(out)


def sample_truncnorm(m, s, rng):
    """One exact draw from ``N(m, s^2)`` restricted to ``[0, inf)``.

    Normal rejection when the bound is below half a standard deviation above
    the mean, exponential proposals (Robert 1995) further in the tail.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    return _backend.kernels.sample_truncnorm(float(m), float(s), rng)


def truncnorm_gibbs(target, N, seed, x0=None):
    """Random-scan Gibbs sampler; records the state after every update.

    Default start is ``max(mu, 1)`` componentwise.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rng = as_generator(seed)
    if x0 is None:
        x0 = np.maximum(target.mu, 1.0)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != target.mu.shape or np.any(x0 <= 0):
        raise ValueError("x0 must lie in the open positive orthant")
    states = _backend.kernels.truncnorm_gibbs(
        target.mu, target.precision, target.cond_sd, x0, int(N), rng
    )
    return GibbsChain(states=states, seed=seed, target=target)


def gaussian_ar_chain(mu, Sigma, N, seed, rho=0.5, x0=None):
    """Gaussian AR(1) chain leaving ``N(mu, Sigma)`` invariant, with scores.

    ``X_n = mu + rho (X_{n-1} - mu) + sqrt(1 - rho^2) L eps_n``. Starting
    ``x0`` away from ``mu`` mimics an un-burnt MCMC transient.
    """
    from .control_variates import Chain

    rng = as_generator(seed)
    mu = np.asarray(mu, dtype=float)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    L = np.linalg.cholesky(Sigma)
    d = mu.size
    eps = rng.standard_normal((N, d)) @ L.T
    y0 = eps[0] if x0 is None else np.asarray(x0, dtype=float) - mu
    c = np.sqrt(1.0 - rho * rho)
    states = np.empty((N, d))
    states[0] = y0
    if N > 1:
        states[1:] = signal.lfilter([c], [1.0, -rho], eps[1:], axis=0, zi=(rho * y0)[None, :])[0]
    states += mu
    scores = gaussian_score(mu, np.linalg.inv(Sigma), states)
    return Chain(states, scores)
