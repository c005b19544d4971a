import logging
import math
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

import config
from mcmc.bound_calculus import ceil_int, w_factor
from models.errors import GapExhausted, NumericalFailure, ReducibleChain, SizeOverflow, TooLarge
from models.schemas import (
    InitialDistribution,
    ReversibleChain,
    SpectralData,
    StochasticMatrix,
    ToySpec,
)

logger = logging.getLogger(__name__)


class GapPair(NamedTuple):
    """Second-largest eigenvalue and spectral radius off the constants"""
    beta1: float
    beta: float


Gaps = Union[SpectralData, GapPair]

EIGEN_RESIDUAL_TOL = 1e-8
STATIONARY_RESIDUAL_TOL = 1e-12
GAP_EXHAUSTED_TOL = 1e-12
_SUBSET_BLOCK = 1 << 16


def stationary_distribution(m: StochasticMatrix) -> np.ndarray:
    """Unique pi with pi P = pi, by a direct linear solve"""
    P = m.entries
    pattern = sparse.csr_matrix(P) if not m.is_sparse else P
    count, _ = connected_components(pattern > 0, directed=True, connection="strong")
    if count != 1:
        logger.error(f"Transition matrix splits into {count} communicating classes")
        raise ReducibleChain(f"chain is reducible: {count} communicating classes")

    size = m.size
    if m.is_sparse:
        system = (P.T - sparse.identity(size, format="csr")).tolil()
        system[size - 1, :] = np.ones(size)
        rhs = np.zeros(size)
        rhs[-1] = 1.0
        pi = spsolve(system.tocsc(), rhs)
    else:
        system = P.T - np.eye(size)
        system[-1, :] = 1.0
        rhs = np.zeros(size)
        rhs[-1] = 1.0
        pi = linalg.solve(system, rhs)

    pi = np.asarray(pi, dtype=float)
    pi = pi / pi.sum()
    residual = np.max(np.abs(P.T @ pi - pi))
    if residual > STATIONARY_RESIDUAL_TOL:
        logger.error(f"Stationary solve residual {residual:.3e}")
        raise NumericalFailure(f"stationary distribution residual {residual:.3e} too large")
    return pi


def spectral_decompose(c: ReversibleChain) -> SpectralData:
    """Eigendecomposition through the symmetrisation D^{1/2} P D^{-1/2}"""
    P = c.matrix.dense()
    root_pi = np.sqrt(c.pi)
    A = root_pi[:, None] * P / root_pi[None, :]
    A = 0.5 * (A + A.T)
    values, vectors = linalg.eigh(A)
    order = np.argsort(values)[::-1]
    values = values[order]
    eigenvectors = vectors[:, order] / root_pi[:, None]

    # u_0 is the constant function
    if eigenvectors[0, 0] < 0:
        eigenvectors[:, 0] = -eigenvectors[:, 0]

    residual = np.max(np.abs(P @ eigenvectors - eigenvectors * values[None, :]))
    if residual > EIGEN_RESIDUAL_TOL:
        logger.error(f"Eigensolver residual {residual:.3e}")
        raise NumericalFailure(f"eigensolver residual {residual:.3e} exceeds {EIGEN_RESIDUAL_TOL}")
    gram = eigenvectors.T @ (c.pi[:, None] * eigenvectors)
    if np.max(np.abs(gram - np.eye(c.size))) > EIGEN_RESIDUAL_TOL:
        raise NumericalFailure("eigenvectors are not pi-orthonormal")

    values = np.clip(values, -1.0, 1.0)
    values[0] = 1.0
    if c.size > 1:
        beta1 = float(values[1])
        beta = max(beta1, abs(float(values[-1])))
    else:
        beta1 = beta = 0.0
    return SpectralData(eigenvalues=values, eigenvectors=eigenvectors, pi=c.pi, beta1=beta1, beta=beta)


def lazy(m: StochasticMatrix) -> StochasticMatrix:
    """(I + P)/2"""
    if m.is_sparse:
        return StochasticMatrix(entries=(sparse.identity(m.size, format="csr") + m.entries) / 2.0)
    return StochasticMatrix(entries=(np.eye(m.size) + m.entries) / 2.0)


def chi2_contrast(nu: InitialDistribution, pi: np.ndarray) -> float:
    pi = np.asarray(pi, dtype=float)
    return math.fsum((nu.nu - pi) ** 2 / pi)


def burnin_constant(pi: np.ndarray, nu: InitialDistribution) -> float:
    """C = sqrt(||1/pi||_inf) * ||nu/pi - 1||_2"""
    pi = np.asarray(pi, dtype=float)
    return math.sqrt(1.0 / pi.min()) * math.sqrt(chi2_contrast(nu, pi))


# ---------------------------------------------------------------------------
# Exact errors
# ---------------------------------------------------------------------------

def _rates(s: SpectralData) -> np.ndarray:
    # beta_k for k >= 1, kept inside the domain of w_factor
    return np.clip(s.eigenvalues[1:], -1.0, np.nextafter(1.0, 0.0))


def exact_stationary_mse(s: SpectralData, f: np.ndarray, n: int) -> float:
    """e_pi(S_n, f)^2 = (1/n^2) sum_k a_k^2 W(n, beta_k)"""
    if s.size > 1 and s.beta1 >= 1.0 - GAP_EXHAUSTED_TOL:
        raise GapExhausted("beta1 = 1: the chain has no spectral gap")
    a = s.coefficients(f)[1:]
    terms = [a_k * a_k * w_factor(n, beta_k) for a_k, beta_k in zip(a, _rates(s))]
    return math.fsum(terms) / n ** 2


def asymptotic_variance(s: SpectralData, f: np.ndarray) -> float:
    """lim n e_pi(S_n, f)^2 = sum_k a_k^2 (1 + beta_k)/(1 - beta_k)"""
    a = s.coefficients(f)[1:]
    rates = _rates(s)
    return math.fsum(a * a * (1.0 + rates) / (1.0 - rates))


def stationary_worst_mse(s: SpectralData, n: int) -> float:
    """sup over ||f||_2 <= 1 of e_pi(S_n, f)^2"""
    return w_factor(n, s.beta1) / n ** 2


def exact_mse(c: ReversibleChain, nu: InitialDistribution, f: np.ndarray, n: int, n0: int) -> float:
    """e_nu(S_{n,n0}, f)^2 by iterated matrix-vector products.

    The chain starts at X_0 ~ nu and S averages f(X_{n0+1}), ..., f(X_{n0+n}).
    """
    if n < 1 or n0 < 0:
        raise ValueError(f"need n >= 1 and n0 >= 0, got n={n}, n0={n0}")
    pi = c.pi
    P = c.matrix
    f = np.asarray(f, dtype=float)
    g = f - math.fsum(pi * f)

    # P^m g for m = 1..n-1 and their running sums G_K
    powers = np.empty((max(n - 1, 0), c.size))
    current = g
    for m in range(n - 1):
        current = P.apply(current)
        powers[m] = current
    lags = [(n - m - 1) * c.inner(g, powers[m]) for m in range(n - 1)]
    stationary = (n * c.inner(g, g) + 2.0 * math.fsum(lags)) / n ** 2

    h = np.asarray(nu.density, dtype=float) - 1.0
    if not np.any(h):
        return max(stationary, 0.0)
    running = np.cumsum(powers, axis=0) if n > 1 else powers
    for _ in range(n0):
        h = P.apply(h)

    weighted = pi * g
    diagonal = []
    cross = []
    for j in range(1, n + 1):
        h = P.apply(h)
        diagonal.append(float(np.dot(h, weighted * g)))
        if j < n:
            cross.append(float(np.dot(h, weighted * running[n - j - 1])))
    bias = (math.fsum(diagonal) + 2.0 * math.fsum(cross)) / n ** 2
    return max(stationary + bias, 0.0)


def _geometric(q: float, n: int) -> float:
    """sum_{j=1}^{n} q^j for |q| <= 1"""
    if q == 1.0:
        return float(n)
    return q * (1.0 - q ** n) / (1.0 - q)


def _mixed_powers(a: float, b: float, n: int) -> float:
    """sum_{j=1}^{n} a^j b^(n+1-j)"""
    if a == b:
        return n * a ** (n + 1)
    return a * b * (b ** n - a ** n) / (b - a)


def analytic_example_error(spec: ToySpec, n: int, n0: int) -> float:
    """Closed-form e_nu(S_{n,n0}, u_1) for the canonical start of each toy family.

    u_1 is pinned per family. Another vector from the same eigenspace can give a different error.
    """
    if n < 1 or n0 < 0:
        raise ValueError(f"need n >= 1 and n0 >= 0, got n={n}, n0={n0}")
    if spec.family == "circle":
        c1 = math.cos(2.0 * math.pi / spec.T)
        c2 = math.cos(4.0 * math.pi / spec.T)
        stationary = w_factor(n, c1) / n ** 2
        bias = c2 ** n0 * ((1.0 + c1) * _geometric(c2, n) - 2.0 * _mixed_powers(c2, c1, n)) / (1.0 - c1)
        mse = stationary + bias / n ** 2
    elif spec.family == "hypercube":
        d = spec.d
        mse = (2 * d - 1) / n - 2.0 * (d * d - d) * (1.0 - (1.0 - 1.0 / d) ** n) / n ** 2
    else:
        t = spec.theta - 1.0
        mse = 1.0 / n - t ** (n0 + 1) * (t ** n - 1.0) / ((spec.theta - 2.0) * n ** 2)
    return math.sqrt(max(mse, 0.0))


# ---------------------------------------------------------------------------
# Bounds and burn-in
# ---------------------------------------------------------------------------

def _check_gap(s: Gaps):
    if s.beta >= 1.0 - GAP_EXHAUSTED_TOL:
        logger.error(f"beta={s.beta} leaves no usable gap")
        raise GapExhausted(f"beta = {s.beta} is numerically 1")


def bounds_finite(s: Gaps, C: float, n: int, n0: int, gap: str = "beta1") -> Tuple[float, float]:
    """(lower, upper) on sup_{||f||_2 <= 1} e_nu(S_{n,n0}, f)^2, same gap choice as bounds_suggested"""
    _check_gap(s)
    if gap not in ("beta1", "beta"):
        raise ValueError(f"gap must be 'beta1' or 'beta', got {gap}")
    leading = s.beta1 if gap == "beta1" else s.beta
    bias = 2.0 * C * s.beta ** n0 / (n ** 2 * (1.0 - s.beta) ** 2)
    upper = 2.0 / (n * (1.0 - leading)) + bias
    lower = (1.0 + s.beta1) / (n * (1.0 - s.beta1)) - 2.0 / (n ** 2 * (1.0 - s.beta1) ** 2) - bias
    return max(lower, 0.0), upper


def bounds_suggested(s: Gaps, n: int, gap: str = "beta1") -> Tuple[float, float]:
    """(lower, upper) MSE bounds once the suggested burn-in has been spent.

    gap="beta1" keeps 1/(1 - beta1) in the leading term, gap="beta" uses 1/(1 - beta) throughout.
    """
    _check_gap(s)
    if gap not in ("beta1", "beta"):
        raise ValueError(f"gap must be 'beta1' or 'beta', got {gap}")
    leading = s.beta1 if gap == "beta1" else s.beta
    tail = 1.0 / (n ** 2 * (1.0 - s.beta) ** 2)
    upper = 2.0 / (n * (1.0 - leading)) + 2.0 * tail
    lower = (1.0 + s.beta1) / (n * (1.0 - s.beta1)) - 4.0 * tail
    return max(lower, 0.0), upper


def suggest_burnin_finite(C: float, beta: float) -> int:
    """n0 = max(ceil(log C / log(1/beta)), 0)"""
    if beta >= 1.0 - GAP_EXHAUSTED_TOL:
        raise GapExhausted(f"beta = {beta} is numerically 1")
    if C <= 1.0 or beta <= 0.0:
        return 0
    n0 = max(ceil_int(math.log(C) / -math.log(beta)), 0)
    logger.info(f"Suggested burn-in {n0} for C={C:.6g}, beta={beta}")
    return n0


# ---------------------------------------------------------------------------
# Conductance
# ---------------------------------------------------------------------------

def _subset_conductance(flows: np.ndarray, pi: np.ndarray, masks: np.ndarray) -> float:
    mass = masks @ pi
    keep = (mass > 0.0) & (mass <= 0.5 + 1e-15)
    if not np.any(keep):
        return math.inf
    masks = masks[keep]
    escape = np.einsum("bi,ij,bj->b", masks, flows, 1.0 - masks)
    return float(np.min(escape / mass[keep]))


def _eigenvector_level_sets(c: ReversibleChain) -> list:
    u1 = spectral_decompose(c).eigenvectors[:, 1]
    order = np.argsort(u1)
    sets = []
    for k in range(1, c.size):
        sets.append(order[:k])
        sets.append(order[::-1][:k])
    return sets


def conductance_finite(c: ReversibleChain,
                       candidates: Optional[Union[str, Iterable[Sequence[int]]]] = None) -> float:
    """phi = min over 0 < pi(A) <= 1/2 of Q(A, A^c)/pi(A).

    Exhaustive below the size cap. A candidate family (explicit index lists, or
    "eigenvector" for the level sets of u_1) only yields an upper bound on phi.
    """
    P = c.matrix.dense()
    pi = c.pi
    flows = pi[:, None] * P
    size = c.size

    if candidates is None:
        if size > config.MAX_CONDUCTANCE_STATES:
            raise TooLarge(f"{size} states exceed the conductance cap {config.MAX_CONDUCTANCE_STATES}")
        bits = np.arange(size)
        best = math.inf
        total = 1 << size
        for start in range(1, total, _SUBSET_BLOCK):
            codes = np.arange(start, min(start + _SUBSET_BLOCK, total))
            masks = ((codes[:, None] >> bits[None, :]) & 1).astype(float)
            best = min(best, _subset_conductance(flows, pi, masks))
        return best

    if isinstance(candidates, str):
        if candidates != "eigenvector":
            raise ValueError(f"unknown candidate family: {candidates}")
        candidates = _eigenvector_level_sets(c)
    masks = []
    for subset in candidates:
        mask = np.zeros(size)
        mask[np.asarray(list(subset), dtype=int)] = 1.0
        masks.append(mask)
    phi = _subset_conductance(flows, pi, np.array(masks))
    logger.warning(f"Conductance {phi:.6g} from a candidate family is only an upper bound")
    return phi


def tv_operator_norm(c: ReversibleChain, n: int) -> float:
    """||P^n - S||_{L_inf -> L_inf} = max_x sum_y |p^n(x, y) - pi(y)|"""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    Pn = np.linalg.matrix_power(c.matrix.dense(), n)
    return float(np.max(np.abs(Pn - c.pi[None, :]).sum(axis=1)))


# ---------------------------------------------------------------------------
# Toy families
# ---------------------------------------------------------------------------

def _assemble(rows: np.ndarray, cols: np.ndarray, values: np.ndarray, size: int):
    matrix = sparse.csr_matrix((values, (rows, cols)), shape=(size, size))
    if size <= config.MAX_DENSE_STATES:
        return matrix.toarray()
    return matrix


def example_constant(spec: ToySpec) -> float:
    """Burn-in constant C for the canonical start of each toy family"""
    if spec.family == "circle":
        return math.sqrt(spec.T ** 2 - spec.T)
    if spec.family == "hypercube":
        return math.sqrt(4.0 ** spec.d - 2.0 ** spec.d)
    return math.sqrt((2.0 - spec.theta) * spec.T)


def example_gaps(spec: ToySpec) -> GapPair:
    """(beta1, beta) from the analytic spectrum"""
    if spec.family == "circle":
        return GapPair(math.cos(2.0 * math.pi / spec.T), math.cos(math.pi / spec.T))
    if spec.family == "hypercube":
        return GapPair(1.0 - 1.0 / spec.d, 1.0 - 1.0 / spec.d)
    return GapPair(0.0, 1.0 - spec.theta)


def make_example(spec: ToySpec) -> Tuple[ReversibleChain, np.ndarray, InitialDistribution]:
    """Transition matrix, canonical integrand u_1 and canonical point-mass start"""
    if spec.family == "circle":
        T = spec.T
        states = np.arange(T)
        rows = np.concatenate([states, states])
        cols = np.concatenate([(states + 1) % T, (states - 1) % T])
        entries = _assemble(rows, cols, np.full(2 * T, 0.5), T)
        pi = np.full(T, 1.0 / T)
        u1 = math.sqrt(2.0) * np.cos(2.0 * math.pi * states / T)
    elif spec.family == "hypercube":
        d = spec.d
        if d > config.MAX_HYPERCUBE_DIM:
            logger.error(f"Hypercube dimension {d} exceeds cap {config.MAX_HYPERCUBE_DIM}")
            raise SizeOverflow(f"2^{d} states exceed the hypercube cap d <= {config.MAX_HYPERCUBE_DIM}")
        size = 1 << d
        states = np.arange(size)
        # bit 0 of the state index is the first coordinate
        flips = [states ^ (1 << i) for i in range(d)]
        rows = np.concatenate([states] * (d + 1))
        cols = np.concatenate([states] + flips)
        values = np.concatenate([np.full(size, 0.5), np.full(size * d, 0.5 / d)])
        entries = _assemble(rows, cols, values, size)
        pi = np.full(size, 1.0 / size)
        u1 = np.where(states & 1, -1.0, 1.0)
    else:
        T, theta = spec.T, spec.theta
        leaves = np.arange(1, T + 1)
        rows = np.concatenate([[0], np.zeros(T, dtype=int), leaves])
        cols = np.concatenate([[0], leaves, np.zeros(T, dtype=int)])
        values = np.concatenate([[theta], np.full(T, (1.0 - theta) / T), np.ones(T)])
        entries = _assemble(rows, cols, values, T + 1)
        pi = np.concatenate([[1.0 / (2.0 - theta)], np.full(T, (1.0 - theta) / (T * (2.0 - theta)))])
        height = math.sqrt((2.0 - theta) / (1.0 - theta))
        u1 = np.concatenate([[0.0], np.full(T // 2, height), np.full(T // 2, -height)])

    chain = ReversibleChain(matrix=StochasticMatrix(entries=entries), pi=pi)
    nu = InitialDistribution.point_mass(0, pi)
    logger.info(f"Built {spec.family} chain with {chain.size} states")
    return chain, u1, nu
