"""The cube method for balanced sampling.

A balanced design draws ``S in {0, 1}^N`` with ``E[S] = pi`` and
``A S = A pi``. The flight phase is a martingale random walk inside the
polytope ``[0, 1]^N`` intersected with ``{x : A x = A pi}``. Each step moves
along a direction in ``ker A`` (zero on coordinates already at 0 or 1) to
one of the two points where the line leaves the cube, with probabilities
that keep the walk a martingale. It stops when no such direction is left,
with at most ``rank(A)`` coordinates still fractional. The landing phase
rounds those remaining coordinates by solving a small linear program over
their ``2^q`` completions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import NoDirection, TooManyResidual
from .numerics import LinearProgram, project_to_null, pseudo_inverse, solve_lp

SNAP = 1e-9
UTOL = 1e-12
MAX_LANDING = 20


def snap_integral(x, tol=SNAP):
    """Set coordinates within ``tol`` of 0 or 1 exactly to 0 or 1 (in place)."""
    x[x <= tol] = 0.0
    x[x >= 1.0 - tol] = 1.0
    return x


def fractional_mask(x, tol=SNAP):
    return (x > tol) & (x < 1.0 - tol)


@dataclass
class BalancedProblem:
    """Inclusion probabilities ``pi`` (length N') and constraints ``A`` (J' x N').

    ``fixed_size`` declares that the sample size is one of the balancing
    totals; the landing phase then only considers completions that keep
    the size exact.
    """

    pi: np.ndarray
    A: np.ndarray
    fixed_size: bool = False

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float).ravel()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.shape[1] != self.pi.size:
            raise ValueError(f"A has {self.A.shape[1]} columns but pi has {self.pi.size} entries")
        if np.any(self.pi < 0) or np.any(self.pi > 1) or not np.all(np.isfinite(self.pi)):
            raise ValueError("inclusion probabilities must lie in [0, 1]")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("constraint matrix has non-finite entries")
        if self.A.shape[0] >= self.pi.size:
            raise ValueError("need fewer constraints than units")

    @property
    def N(self):
        return self.pi.size

    @property
    def J(self):
        return self.A.shape[0]

    @property
    def totals(self):
        return self.A @ self.pi


@dataclass
class FlightState:
    pi_t: np.ndarray
    free: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self.pi_t = snap_integral(np.array(self.pi_t, dtype=float))
        if self.free is None:
            self.free = fractional_mask(self.pi_t)

    @classmethod
    def start(cls, problem):
        return cls(problem.pi)


def _step_lengths(x, u):
    """Largest ``lam1, lam2 >= 0`` with ``x + lam1 u`` and ``x - lam2 u`` in the cube."""
    idx = np.flatnonzero(np.abs(u) > UTOL)
    ul, xl = u[idx], x[idx]
    pos = ul > 0
    up = np.where(pos, 1.0 - xl, -xl) / ul
    down = np.where(pos, xl, xl - 1.0) / ul
    i1, i2 = up.argmin(), down.argmin()
    return up[i1], idx[i1], down[i2], idx[i2]


def _naive_move(x, free, A, rng):
    """Advance ``x`` in place by one projected step; raise NoDirection when stuck."""
    nfree = int(free.sum())
    if nfree == 0:
        raise NoDirection("all coordinates are integral")
    v = np.zeros(x.size)
    while True:
        v[free] = rng.standard_normal(nfree)
        u = project_to_null(v, A, free)
        umax = np.abs(u).max()
        if umax > 1e-10 * np.sqrt(v @ v):
            break
        # v fell in the row space by accident; stop only if the kernel is trivial
        if nfree <= np.linalg.matrix_rank(A[:, free]):
            raise NoDirection("no direction in ker A on the free coordinates")
    u /= umax

    lam1, hit1, lam2, hit2 = _step_lengths(x, u)
    if lam1 + lam2 == 0.0:
        raise NoDirection("degenerate direction")
    if rng.random() < lam2 / (lam1 + lam2):
        x += lam1 * u
        x[hit1] = 1.0 if u[hit1] > 0 else 0.0
    else:
        x -= lam2 * u
        x[hit2] = 0.0 if u[hit2] > 0 else 1.0
    snap_integral(x)


def flight_step(state, problem, rng):
    """One flight iteration using the full projection onto ``ker A``.

    Raises
    ------
    NoDirection
        When the projected direction vanishes: the flight phase is over.
    """
    x = state.pi_t.copy()
    _naive_move(x, state.free, problem.A, rng)
    return FlightState(x, t=state.t + 1)


def _naive_flight(problem, rng, trace):
    x = snap_integral(problem.pi.copy())
    while True:
        try:
            _naive_move(x, fractional_mask(x), problem.A, rng)
        except NoDirection:
            return x
        if trace is not None:
            trace.append(x.copy())


def _fast_flight(problem, rng, trace, order):
    if order == "random":
        perm = rng.permutation(problem.N)
    else:
        perm = np.arange(problem.N)
    x = np.ascontiguousarray(problem.pi[perm], dtype=float)
    A = np.ascontiguousarray(problem.A[:, perm])
    inner = None if trace is None else []
    _backend.kernels.fast_flight(x, A, rng, SNAP, UTOL, inner)
    out = np.empty_like(x)
    out[perm] = x
    if trace is not None:
        for row in inner:
            full = np.empty_like(row)
            full[perm] = row
            trace.append(full)
    return out


def flight_phase(problem, rng, method="auto", order="random", trace=None):
    """Run the flight phase to termination and return the end point ``pi*``.

    Parameters
    ----------
    method : {"auto", "fast", "naive"}
        ``"fast"`` works on a sliding block of ``J' + 1`` free units
        (O(J'^3) per step, compiled kernel when available); ``"naive"``
        projects onto ``ker A`` over all free units every step. ``"auto"``
        uses the block method once ``N' > 10 J'``.
    order : {"random", "given"}
        Order in which the block method visits units.
    trace : list, optional
        If given, ``pi(t)`` after every step is appended to it.
    """
    if method == "auto":
        method = "fast" if problem.N > 10 * problem.J else "naive"
    if method == "fast":
        return _fast_flight(problem, rng, trace, order)
    if method == "naive":
        return _naive_flight(problem, rng, trace)
    raise ValueError(f"unknown flight method {method!r}")


@dataclass
class LandingProgram:
    """Landing LP over the completions of the fractional coordinates."""

    U_star: np.ndarray
    completions: np.ndarray
    cost: np.ndarray
    marginal: np.ndarray = field(default=None)

    @property
    def q(self):
        return self.U_star.size


def landing_program(pi_star, problem):
    """Build and solve the landing LP; ``marginal`` holds the optimal ``xi*``.

    Cost of a completion ``s`` is ``(s - pi*)^t A^t (A A^t)^- A (s - pi*)``.
    Constraints: ``xi*`` is a distribution whose marginals on the
    fractional coordinates equal ``pi*``.
    """
    pi_star = np.asarray(pi_star, dtype=float)
    U = np.flatnonzero(fractional_mask(pi_star))
    q = U.size
    if q > MAX_LANDING:
        raise TooManyResidual(f"{q} fractional coordinates left (limit {MAX_LANDING})")
    codes = np.arange(2**q)[:, None]
    comp = ((codes >> np.arange(q)) & 1).astype(float)
    target = pi_star[U]
    if problem.fixed_size:
        r = round(target.sum())
        if abs(target.sum() - r) < 1e-6:
            comp = comp[comp.sum(axis=1) == r]
    A = problem.A
    G = A[:, U].T @ pseudo_inverse(A @ A.T) @ A[:, U]
    D = comp - target
    cost = np.einsum("ki,ij,kj->k", D, G, D)
    K = comp.shape[0]
    lp = LinearProgram(
        c=cost,
        A_eq=np.vstack([np.ones(K), comp.T]),
        b_eq=np.concatenate([[1.0], target]),
        lo=0.0,
        hi=np.inf,
    )
    xi = np.clip(solve_lp(lp), 0.0, None)
    xi /= xi.sum()
    return LandingProgram(U, comp, cost, xi)


def landing_phase(pi_star, problem, rng):
    """Round the fractional coordinates of ``pi*`` by sampling from the landing LP."""
    s = snap_integral(np.array(pi_star, dtype=float))
    if not fractional_mask(s).any():
        return np.rint(s)
    prog = landing_program(s, problem)
    cdf = np.cumsum(prog.marginal)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, cdf.size - 1)
    s[prog.U_star] = prog.completions[k]
    return np.rint(s)


@dataclass
class CubeOutcome:
    sample: np.ndarray
    pi_star: np.ndarray
    residual: int

    @property
    def landed(self):
        return self.residual > 0


def cube_sample(problem, rng, method="auto", order="random", details=False):
    """Flight phase then, if needed, landing. Returns the 0/1 vector ``s``.

    With ``details=True`` a :class:`CubeOutcome` is returned instead, which
    also records ``pi*`` and the number of coordinates the landing rounded.
    """
    pi_star = flight_phase(problem, rng, method=method, order=order)
    residual = int(fractional_mask(pi_star).sum())
    s = landing_phase(pi_star, problem, rng)
    if details:
        return CubeOutcome(s, pi_star, residual)
    return s
