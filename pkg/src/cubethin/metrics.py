"""Sample-quality criteria: kernel Stein discrepancy, energy distance, star discrepancy.

All three accept signed, weighted point sets, so the cube-thinning output
(point masses ``+-Omega/M``) can be scored alongside ordinary subsamples.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.spatial import distance

from .errors import DegenerateSample, DimensionMismatch, InvalidRange, MissingScores, ZeroMass
from .samplers import as_generator

_CHUNK = 1 << 22  # entries per pairwise block


@dataclass(frozen=True)
class SteinKernelConfig:
    """Gaussian base kernel ``exp(-|x - y|^2 / (2 l^2))`` with bandwidth ``l``."""

    bandwidth: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidRange(f"bandwidth must be positive, got {self.bandwidth}")


def _config(cfg):
    if isinstance(cfg, SteinKernelConfig):
        return cfg
    return SteinKernelConfig(float(cfg))


def stein_kernel(x, y, sx, sy, cfg=SteinKernelConfig()):
    """Langevin Stein kernel built on the Gaussian base kernel.

    ``k_p(x, y) = div_x div_y k + grad_x k . s_y + grad_y k . s_x + k s_x . s_y``,
    which for the Gaussian kernel is
    ``k (d/l^2 - r^2/l^4 + (x - y).(s_x - s_y)/l^2 + s_x . s_y)``.
    Inputs broadcast over leading axes; the last axis is the dimension.
    """
    cfg = _config(cfg)
    x, y, sx, sy = (np.asarray(a, dtype=float) for a in (x, y, sx, sy))
    d = x.shape[-1]
    if not (y.shape[-1] == sx.shape[-1] == sy.shape[-1] == d):
        raise DimensionMismatch("points and scores disagree on dimension")
    inv = 1.0 / cfg.bandwidth**2
    diff = x - y
    r2 = np.sum(diff * diff, axis=-1)
    k = np.exp(-0.5 * r2 * inv)
    cross = np.sum(diff * (sx - sy), axis=-1)
    ss = np.sum(sx * sy, axis=-1)
    return k * (d * inv - r2 * inv * inv + cross * inv + ss)


def stein_gram(X, S, cfg=SteinKernelConfig(), Y=None, SY=None):
    """Matrix ``k_p(X_m, Y_n)`` (``Y = X`` by default)."""
    cfg = _config(cfg)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if Y is None:
        Y, SY = X, S
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    SY = np.atleast_2d(np.asarray(SY, dtype=float))
    d = X.shape[1]
    inv = 1.0 / cfg.bandwidth**2
    r2 = distance.cdist(X, Y, "sqeuclidean")
    cross = np.sum(X * S, axis=1)[:, None] - X @ SY.T - S @ Y.T + np.sum(Y * SY, axis=1)[None, :]
    return np.exp(-0.5 * r2 * inv) * (d * inv - r2 * inv * inv + cross * inv + S @ SY.T)


def ksd(points, scores, cfg=SteinKernelConfig(), signs=None):
    """Squared kernel Stein discrepancy ``M^-2 sum_{m,n} e_m e_n k_p(X_m, X_n)``.

    ``signs`` (default all +1) gives the sign ``e_m`` of every point of a
    signed subsample. Repeated points count with multiplicity.
    """
    if scores is None:
        raise MissingScores("KSD needs score vectors at the points")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    if X.shape != S.shape:
        raise DimensionMismatch(f"points {X.shape} and scores {S.shape} differ")
    m = X.shape[0]
    if m < 1:
        raise DegenerateSample("KSD of an empty sample")
    e = np.ones(m) if signs is None else np.asarray(signs, dtype=float)
    if e.shape != (m,):
        raise DimensionMismatch("one sign per point required")
    total = 0.0
    step = max(1, _CHUNK // m)
    for lo in range(0, m, step):
        G = stein_gram(X[lo : lo + step], S[lo : lo + step], cfg, X, S)
        total += float(e[lo : lo + step] @ G @ e)
    return total / (m * m)


def median_bandwidth(points, max_points=1000, seed=0):
    """Median pairwise Euclidean distance, over at most ``max_points`` points.

    Larger samples are subsampled without replacement using ``seed``. If
    more than half the pairs coincide, the median over distinct pairs is
    used instead.

    Raises
    ------
    DegenerateSample
        If fewer than two distinct points are present.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] > max_points:
        keep = np.sort(as_generator(seed).choice(X.shape[0], max_points, replace=False))
        X = X[keep]
    if X.shape[0] < 2:
        raise DegenerateSample("need at least two points")
    dist = distance.pdist(X)
    pos = dist[dist > 0]
    if pos.size == 0:
        raise DegenerateSample("all points are identical")
    ell = float(np.median(dist))
    return ell if ell > 0 else float(np.median(pos))


@dataclass
class EmpiricalSignedMeasure:
    """``sum_m weights[m] delta_{points[m]}``; weights may be negative."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.ndim != 2:
            raise DimensionMismatch("points must be (M, d)")
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != self.points.shape[0]:
            raise DimensionMismatch("one weight per point required")

    @classmethod
    def uniform(cls, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def from_subsample(cls, states, sub):
        """Signed measure of a cube-thinning subsample."""
        return cls(np.asarray(states)[sub.indices], sub.weights)

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def dim(self):
        return self.points.shape[1]


def _pair_sum(X, a, Y, b):
    """``sum_{i,j} a_i b_j |X_i - Y_j|`` in fixed-size row blocks."""
    total = 0.0
    step = max(1, _CHUNK // max(Y.shape[0], 1))
    for lo in range(0, X.shape[0], step):
        D = distance.cdist(X[lo : lo + step], Y)
        total += float(a[lo : lo + step] @ D @ b)
    return total


def energy_distance(nu, ref, drop_ref_term=False):
    """Generalised energy distance between two signed measures of nonzero mass.

    ``2/(a1 a2) E|X - Y| - 1/a1^2 E|X - X'| - 1/a2^2 E|Y - Y'|`` where the
    expectations are weighted double sums and ``a1, a2`` the total masses.
    ``drop_ref_term`` omits the last term, which does not depend on ``nu``.

    Raises
    ------
    ZeroMass
        If either measure has zero total mass.
    """
    if nu.dim != ref.dim:
        raise DimensionMismatch("measures live in different dimensions")
    a1, a2 = nu.mass, ref.mass
    if a1 == 0.0 or a2 == 0.0:
        raise ZeroMass("energy distance is undefined for a measure of zero mass")
    out = 2.0 / (a1 * a2) * _pair_sum(nu.points, nu.weights, ref.points, ref.weights)
    out -= _pair_sum(nu.points, nu.weights, nu.points, nu.weights) / a1**2
    if not drop_ref_term:
        out -= _pair_sum(ref.points, ref.weights, ref.points, ref.weights) / a2**2
    return out


def gaussian_map(points, mean, sd):
    """Standardise each coordinate then apply the standard normal CDF."""
    points = np.asarray(points, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise InvalidRange("standard deviations must be positive")
    return special.ndtr((points - mean) / sd)


def reference_moments(ref):
    """Weighted componentwise mean and standard deviation of ``ref``.

    A coordinate with no spread (e.g. a one-point reference) gets unit scale.
    """
    if ref.mass == 0.0:
        raise ZeroMass("reference measure has zero mass")
    a = ref.weights / ref.mass
    mean = a @ ref.points
    var = a @ (ref.points - mean) ** 2
    sd = np.sqrt(np.clip(var, 0.0, None))
    return mean, np.where(sd > 0, sd, 1.0)


def box_masses(U, weights, corners):
    """Signed mass of ``[0, b]`` for every row ``b`` of ``corners``."""
    out = np.empty(corners.shape[0])
    step = max(1, _CHUNK // max(U.shape[0], 1))
    for lo in range(0, corners.shape[0], step):
        B = corners[lo : lo + step]
        inside = U[None, :, 0] <= B[:, None, 0]
        for c in range(1, U.shape[1]):
            inside &= U[None, :, c] <= B[:, None, c]
        out[lo : lo + step] = inside @ weights
    return out


def star_discrepancy(nu, ref, n_boxes=4096, rng=0):
    """Randomised star discrepancy after mapping both measures to the unit cube.

    Both supports go through :func:`gaussian_map` with the moments of
    ``ref``; ``n_boxes`` anchored boxes ``[0, b]`` have corners drawn
    uniformly from ``rng``. Returns ``max_b |ref([0, b]) - nu([0, b])|``.
    """
    if nu.dim != ref.dim:
        raise DimensionMismatch("measures live in different dimensions")
    if nu.points.shape[0] == 0 or ref.points.shape[0] == 0:
        raise DegenerateSample("both measures need at least one point")
    if int(n_boxes) < 1:
        raise InvalidRange("n_boxes must be positive")
    mean, sd = reference_moments(ref)
    corners = as_generator(rng).random((int(n_boxes), ref.dim))
    gap = box_masses(gaussian_map(ref.points, mean, sd), ref.weights, corners)
    gap -= box_masses(gaussian_map(nu.points, mean, sd), nu.weights, corners)
    return float(np.abs(gap).max())
