import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

import config
from models.errors import DegenerateChord, DomainError, NonConvergent
from models.schemas import (
    BodySpec,
    Chord,
    DensitySpec,
    InitialSpec,
    KernelConfig,
    LogDensityOracle,
    MembershipOracle,
    OracleCalls,
    ToySpec,
)

logger = logging.getLogger(__name__)

# Fresh directions tried for a row whose chord came out thinner than eps0
CHORD_RETRIES = 8


class RngStream:
    """Independent PCG64 stream keyed by (seed, stream_id)"""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed
        self.stream_id = stream_id
        sequence = np.random.SeedSequence(seed, spawn_key=(stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self.generator.integers(0, high, size=size)


def _count(calls: Optional[OracleCalls], field: str, amount: int):
    if calls is not None:
        setattr(calls, field, getattr(calls, field) + int(amount))


# ---------------------------------------------------------------------------
# Proposal primitives
# ---------------------------------------------------------------------------

def sample_direction(rng: RngStream, d: int, batch: Optional[int] = None) -> np.ndarray:
    """Uniform direction on the unit sphere, one row per trajectory when batch is given"""
    if d < 1:
        raise DomainError(f"dimension must be positive, got {d}")
    rows = 1 if batch is None else batch
    z = rng.normal((rows, d))
    norms = np.linalg.norm(z, axis=1)
    while np.any(norms == 0.0):
        zero = norms == 0.0
        z[zero] = rng.normal((int(zero.sum()), d))
        norms = np.linalg.norm(z, axis=1)
    z = z / norms[:, None]
    return z[0] if batch is None else z


def _uniform_in_ball(rng: RngStream, m: int, d: int, radius: float) -> np.ndarray:
    directions = sample_direction(rng, d, m)
    radii = radius * rng.uniform(m) ** (1.0 / d)
    return directions * radii[:, None]


def ball_walk_step(x: np.ndarray, delta: float, membership: MembershipOracle, rng: RngStream,
                   calls: Optional[OracleCalls] = None) -> np.ndarray:
    """Propose uniformly in B(x, delta); stay put when the proposal leaves the domain"""
    x = np.atleast_2d(x)
    m, d = x.shape
    y = x + _uniform_in_ball(rng, m, d, delta)
    inside = np.asarray(membership.contains(y), dtype=bool)
    _count(calls, "membership", m)
    return np.where(inside[:, None], y, x)


def _metropolis_accept(x, log_x, y, log_y, rng: RngStream):
    # min{0, log rho(y) - log rho(x)} in log space; -inf proposals never pass
    with np.errstate(invalid="ignore"):
        log_ratio = np.minimum(0.0, log_y - log_x)
    log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
    accept = np.log(rng.uniform(len(log_ratio))) < log_ratio
    x_new = np.where(accept[:, None], y, x) if x.ndim == 2 else np.where(accept, y, x)
    return x_new, np.where(accept, log_y, log_x)


def metropolis_step(x: np.ndarray, proposal_step: Callable, log_rho: LogDensityOracle, rng: RngStream,
                    calls: Optional[OracleCalls] = None, log_rho_x: Optional[np.ndarray] = None,
                    return_log: bool = False):
    """One Metropolis step for a symmetric proposal.

    Each step evaluates rho once, at the proposal. Pass log_rho_x to carry log rho of the
    current state between steps; with return_log the new log rho is returned alongside.
    """
    x = np.atleast_2d(x)
    if log_rho_x is None:
        log_rho_x = np.asarray(log_rho.eval(x), dtype=float)
        _count(calls, "rho_init", len(x))
    y = proposal_step(x, rng)
    log_y = np.asarray(log_rho.eval(y), dtype=float)
    _count(calls, "rho", len(y))
    x_new, log_new = _metropolis_accept(x, log_rho_x, y, log_y, rng)
    return (x_new, log_new) if return_log else x_new


def lazy_step(inner_step: Callable, x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Hold with probability 1/2, otherwise delegate to inner_step"""
    move = rng.uniform(len(x)) >= 0.5
    out = np.array(x, copy=True)
    if np.any(move):
        out[move] = inner_step(x[move])
    return out


# ---------------------------------------------------------------------------
# Hit-and-run
# ---------------------------------------------------------------------------

def _bisection_rounds(span: float, eps0: float) -> int:
    return max(int(math.ceil(math.log2(span / (eps0 / 4.0)))), 1)


def _chord_side(membership: MembershipOracle, x: np.ndarray, directions: np.ndarray, eps0: float,
                calls: Optional[OracleCalls]) -> np.ndarray:
    """Outer end of the bracket along +direction, within eps0/4 of the boundary"""
    m = len(x)
    span = 2.0 * membership.outer_radius
    outer = np.full(m, span)
    still_inside = np.asarray(membership.contains(x + outer[:, None] * directions), dtype=bool)
    _count(calls, "membership", m)
    doublings = 0
    while np.any(still_inside):
        if doublings >= config.MAX_DOUBLINGS:
            raise DomainError("membership oracle reports points far outside its outer radius")
        outer[still_inside] *= 2.0
        idx = np.flatnonzero(still_inside)
        farther = x[idx] + outer[idx, None] * directions[idx]
        still_inside[idx] = np.asarray(membership.contains(farther), dtype=bool)
        _count(calls, "membership", len(idx))
        doublings += 1

    inner = np.zeros(m)
    for _ in range(_bisection_rounds(outer.max(), eps0)):
        mid = 0.5 * (inner + outer)
        hit = np.asarray(membership.contains(x + mid[:, None] * directions), dtype=bool)
        _count(calls, "membership", m)
        inner = np.where(hit, mid, inner)
        outer = np.where(hit, outer, mid)
    return outer


def _chords(membership, x, directions, eps0, calls) -> Tuple[np.ndarray, np.ndarray]:
    lambda2 = _chord_side(membership, x, directions, eps0, calls)
    lambda1 = -_chord_side(membership, x, -directions, eps0, calls)
    return lambda1, lambda2


def chord_bisect(membership: MembershipOracle, x: np.ndarray, direction: np.ndarray,
                 eps0: Optional[float] = None) -> Chord:
    """Bracket of the chord through interior point x along a unit direction"""
    eps0 = eps0 or config.CHORD_EPS_REL * membership.outer_radius
    calls = OracleCalls()
    lambda1, lambda2 = _chords(membership, np.atleast_2d(x).astype(float),
                               np.atleast_2d(direction).astype(float), eps0, calls)
    chord = Chord(lambda1=float(lambda1[0]), lambda2=float(lambda2[0]), oracle_calls=calls.membership)
    if chord.length < eps0:
        raise DegenerateChord(f"chord length {chord.length:.3e} below eps0={eps0:.3e}")
    return chord


def _hit_and_run_rows(x, membership, rng, eps0, calls):
    m, d = x.shape
    directions = sample_direction(rng, d, m)
    lambda1, lambda2 = _chords(membership, x, directions, eps0, calls)
    degenerate = (lambda2 - lambda1) < eps0

    y = x.copy()
    pending = np.flatnonzero(~degenerate)
    while len(pending):
        t = lambda1[pending] + rng.uniform(len(pending)) * (lambda2[pending] - lambda1[pending])
        proposal = x[pending] + t[:, None] * directions[pending]
        inside = np.asarray(membership.contains(proposal), dtype=bool)
        _count(calls, "membership", len(pending))
        y[pending[inside]] = proposal[inside]
        pending = pending[~inside]
    return y, degenerate


def hit_and_run_step(x: np.ndarray, membership: MembershipOracle, rng: RngStream,
                     eps0: Optional[float] = None, calls: Optional[OracleCalls] = None) -> np.ndarray:
    """Uniform point on the chord through x in a uniform direction"""
    eps0 = eps0 or config.CHORD_EPS_REL * membership.outer_radius
    x = np.atleast_2d(x).astype(float)
    y, degenerate = _hit_and_run_rows(x, membership, rng, eps0, calls)
    if np.any(degenerate):
        raise DegenerateChord(f"{int(degenerate.sum())} chords shorter than eps0={eps0:.3e}")
    return y


def _hit_and_run_retrying(x, membership, rng, eps0, calls):
    y, degenerate = _hit_and_run_rows(x, membership, rng, eps0, calls)
    for _ in range(CHORD_RETRIES):
        if not np.any(degenerate):
            return y
        idx = np.flatnonzero(degenerate)
        logger.warning(f"Retrying {len(idx)} degenerate chords with fresh directions")
        y[idx], degenerate_again = _hit_and_run_rows(x[idx], membership, rng, eps0, calls)
        degenerate[idx] = degenerate_again
    if np.any(degenerate):
        logger.error("Chords stayed degenerate after retries")
        raise DegenerateChord(f"chords shorter than eps0={eps0:.3e} after {CHORD_RETRIES} retries")
    return y


# ---------------------------------------------------------------------------
# Builtin bodies and densities
# ---------------------------------------------------------------------------

def make_body(spec: BodySpec, d: int) -> MembershipOracle:
    r = spec.r
    half_width = spec.half_width
    if spec.name == "ball":
        return MembershipOracle(contains=lambda y: np.linalg.norm(y, axis=1) <= r,
                                dim=d, outer_radius=r, inner_radius=r, name=f"ball(r={r})")
    if half_width is None:
        raise DomainError(f"{spec.name} needs half_width")
    if spec.name == "box":
        return MembershipOracle(contains=lambda y: np.max(np.abs(y), axis=1) <= half_width,
                                dim=d, outer_radius=half_width * math.sqrt(d), inner_radius=half_width,
                                name=f"box(h={half_width})")

    def contains(y):
        return (np.linalg.norm(y, axis=1) <= r) & (np.max(np.abs(y), axis=1) <= half_width)

    return MembershipOracle(contains=contains, dim=d, outer_radius=min(r, half_width * math.sqrt(d)),
                            inner_radius=min(r, half_width),
                            name=f"ball_box(r={r}, h={half_width})")


def make_log_density(spec: DensitySpec, d: int, radius: Optional[float] = None) -> LogDensityOracle:
    """Log-density oracle; the Lipschitz constant is filled in when a domain radius is known"""
    center = spec.center
    if spec.name == "uniform":
        return LogDensityOracle(eval=lambda y: np.zeros(len(y)), dim=d, lipschitz_L=0.0, name="uniform")
    if spec.name == "laplace":
        scale = spec.scale
        return LogDensityOracle(eval=lambda y: -np.linalg.norm(y - center, axis=1) / scale,
                                dim=d, lipschitz_L=1.0 / scale, name=f"laplace(scale={scale})")
    precision = spec.precision
    L = None if radius is None else precision * (radius + abs(center) * math.sqrt(d))
    return LogDensityOracle(eval=lambda y: -0.5 * precision * np.sum((y - center) ** 2, axis=1),
                            dim=d, lipschitz_L=L, name=f"gaussian(precision={precision})")


def spot_check_lipschitz(oracle: LogDensityOracle, points: np.ndarray, rng: RngStream,
                         pairs: int = 1000) -> bool:
    """Check |log rho(x) - log rho(y)| <= L |x - y| + 1e-9 on random pairs of points"""
    if oracle.lipschitz_L is None:
        raise DomainError(f"{oracle.name} has no Lipschitz constant to check")
    points = np.atleast_2d(points)
    i = rng.integers(len(points), pairs)
    j = rng.integers(len(points), pairs)
    gap = np.abs(oracle.eval(points[i]) - oracle.eval(points[j]))
    allowed = oracle.lipschitz_L * np.linalg.norm(points[i] - points[j], axis=1) + 1e-9
    violations = int(np.sum(gap > allowed))
    if violations:
        logger.warning(f"{violations} of {pairs} pairs violate L={oracle.lipschitz_L} for {oracle.name}")
    return violations == 0


# ---------------------------------------------------------------------------
# Analytic benchmark kernels
# ---------------------------------------------------------------------------

def example1_step(x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Draw from k(x, y) = (1 + x + y)/(x + 3/2) on [0, 1] by the closed-form inverse CDF"""
    u = rng.uniform(len(x))
    base = 1.0 + x[:, 0]
    y = -base + np.sqrt(base * base + 2.0 * u * (x[:, 0] + 1.5))
    return y[:, None]


def example1_stationary(rng: RngStream, m: int) -> np.ndarray:
    """Draw from rho(y) = (2y + 3)/4 on [0, 1]"""
    u = rng.uniform(m)
    return (-1.5 + np.sqrt(2.25 + 4.0 * u))[:, None]


def example2_step(x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Jump uniformly to the other half of [-1, 1]"""
    u = rng.uniform(len(x))
    left = x[:, 0] <= 0.0
    return np.where(left, 1.0 - u, -u)[:, None]


def contracting_normal_step(x: np.ndarray, theta: float, rng: RngStream) -> np.ndarray:
    return theta * x + math.sqrt(1.0 - theta * theta) * rng.normal(x.shape)


def toy_u1(spec: ToySpec, states: np.ndarray) -> np.ndarray:
    """Canonical eigenfunction u_1 of a toy family, evaluated on state indices"""
    states = np.asarray(states)
    if spec.family == "circle":
        return math.sqrt(2.0) * np.cos(2.0 * math.pi * states / spec.T)
    if spec.family == "hypercube":
        return np.where(states & 1, -1.0, 1.0)
    height = math.sqrt((2.0 - spec.theta) / (1.0 - spec.theta))
    return np.where(states == 0, 0.0, np.where(states <= spec.T // 2, height, -height))


def toy_step(spec: ToySpec, x: np.ndarray, rng: RngStream) -> np.ndarray:
    """One move of a toy chain without materialising its transition matrix"""
    m = len(x)
    u = rng.uniform(m)
    if spec.family == "circle":
        return np.where(u < 0.5, (x + 1) % spec.T, (x - 1) % spec.T)
    if spec.family == "hypercube":
        bit = np.minimum((u * 2 * spec.d).astype(np.int64), 2 * spec.d - 1)
        flip = bit < spec.d
        return np.where(flip, x ^ (np.int64(1) << np.minimum(bit, spec.d - 1)), x)
    leaf = 1 + np.minimum(((u - spec.theta) / (1.0 - spec.theta) * spec.T).astype(np.int64), spec.T - 1)
    from_center = np.where(u < spec.theta, 0, leaf)
    return np.where(x == 0, from_center, 0)


def finite_chain_step(cumulative: np.ndarray, x: np.ndarray, rng: RngStream) -> np.ndarray:
    u = rng.uniform(len(x))
    nxt = (cumulative[x] <= u[:, None]).sum(axis=1)
    return np.minimum(nxt, cumulative.shape[1] - 1)


def l1_contraction_1d(kernel_density: Callable, rho: Callable, grid_points: int = 65,
                      lower: float = 0.0, upper: float = 1.0, tol: float = 1e-4,
                      max_doublings: Optional[int] = None) -> float:
    """alpha = int ess-sup_y |k(x, y)/rho(y) - 1| rho(x) dx by grid max and trapezoid rule.

    rho is normalised on the grid, so only its shape matters.
    """
    max_doublings = config.MAX_DOUBLINGS if max_doublings is None else max_doublings

    def evaluate(points: int) -> float:
        grid = np.linspace(lower, upper, points)
        density = np.asarray(rho(grid), dtype=float)
        density = density / trapezoid(density, grid)
        sup = np.empty(points)
        for start in range(0, points, 512):
            rows = grid[start:start + 512]
            k = np.asarray(kernel_density(rows[:, None], grid[None, :]), dtype=float)
            sup[start:start + 512] = np.max(np.abs(k / density[None, :] - 1.0), axis=1)
        return float(trapezoid(sup * density, grid))

    points = grid_points
    previous = evaluate(points)
    for _ in range(max_doublings):
        points = 2 * points - 1
        current = evaluate(points)
        if abs(current - previous) < tol:
            logger.info(f"L1 contraction {current:.6g} stable at {points} grid points")
            return current
        previous = current
    logger.error(f"L1 contraction did not stabilise after {max_doublings} doublings")
    raise NonConvergent(f"grid refinement did not stabilise within {max_doublings} doublings")


# ---------------------------------------------------------------------------
# Kernel samplers
# ---------------------------------------------------------------------------

class KernelSampler:
    """Vectorised transition sampler built from a KernelConfig.

    Continuous states are (m, d) float arrays, finite-chain states are (m,) integer arrays.
    Metropolis kinds carry log rho of the current state as auxiliary data so that each
    step costs exactly one density evaluation.
    """

    def __init__(self, cfg: KernelConfig, membership: Optional[MembershipOracle] = None,
                 log_density: Optional[LogDensityOracle] = None, cumulative: Optional[np.ndarray] = None,
                 pi: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.kind = cfg.kind
        self.membership = membership
        self.log_density = log_density
        self.cumulative = cumulative
        self.pi = pi
        self.discrete = cfg.kind in ("toy_chain", "finite_chain")
        if self.kind in ("ball_walk_metropolis", "hit_and_run"):
            self.dim = cfg.d or 1
        else:
            self.dim = 1
        self.eps0 = cfg.eps0
        if self.kind == "hit_and_run" and self.eps0 is None:
            self.eps0 = config.CHORD_EPS_REL * membership.outer_radius

    def init_aux(self, x: np.ndarray, calls: Optional[OracleCalls] = None):
        if self.kind == "ball_walk_metropolis":
            _count(calls, "rho_init", len(x))
            return np.asarray(self.log_density.eval(x), dtype=float)
        return None

    def _move(self, x, aux, rng: RngStream, calls):
        kind = self.kind
        if kind == "ball_walk_metropolis":
            def propose(points, stream):
                return ball_walk_step(points, self.cfg.delta, self.membership, stream, calls)

            return metropolis_step(x, propose, self.log_density, rng, calls, log_rho_x=aux, return_log=True)
        if kind == "hit_and_run":
            return _hit_and_run_retrying(x, self.membership, rng, self.eps0, calls), None
        if kind == "independence_normal":
            xi = self.cfg.xi
            y = xi * rng.normal((len(x), 1))
            _count(calls, "rho", len(y))
            # log(pi/q) up to a constant for pi = N(0, 1), q = N(0, xi^2)
            def weight(z):
                return -0.5 * z[:, 0] ** 2 * (1.0 - 1.0 / xi ** 2)

            return _metropolis_accept(x, weight(x), y, weight(y), rng)[0], None
        if kind == "contracting_normal":
            return contracting_normal_step(x, self.cfg.theta, rng), None
        if kind == "example1":
            return example1_step(x, rng), None
        if kind == "example2":
            return example2_step(x, rng), None
        if kind == "toy_chain":
            return toy_step(self.cfg.toy, x, rng), None
        return finite_chain_step(self.cumulative, x, rng), None

    def step(self, x, aux, rng: RngStream, calls: Optional[OracleCalls] = None):
        if not self.cfg.lazy:
            return self._move(x, aux, rng, calls)
        move = rng.uniform(len(x)) >= 0.5
        x_new = np.array(x, copy=True)
        aux_new = None if aux is None else np.array(aux, copy=True)
        if np.any(move):
            moved, moved_aux = self._move(x[move], None if aux is None else aux[move], rng, calls)
            x_new[move] = moved
            if aux_new is not None:
                aux_new[move] = moved_aux
        return x_new, aux_new

    def sample_initial(self, spec: InitialSpec, m: int, rng: RngStream) -> np.ndarray:
        kind = spec.kind
        if self.discrete:
            if kind in ("point", "canonical"):
                return np.full(m, spec.state or 0, dtype=np.int64)
            if kind == "stationary":
                if self.pi is None:
                    raise DomainError("stationary start needs the stationary distribution")
                cumulative = np.cumsum(self.pi)
                return np.minimum(np.searchsorted(cumulative, rng.uniform(m), side="right"), len(self.pi) - 1)
            raise DomainError(f"initial kind {kind} does not apply to finite chains")

        d = self.dim
        if kind in ("point", "canonical"):
            point = np.zeros(d) if spec.point is None else np.asarray(spec.point, dtype=float)
            if point.shape != (d,):
                raise DomainError(f"initial point must have dimension {d}")
            return np.tile(point, (m, 1))
        if kind == "uniform_interval":
            if spec.radius is None or d != 1:
                raise DomainError("uniform_interval needs a radius and a one-dimensional state")
            return (spec.center + spec.radius * (2.0 * rng.uniform(m) - 1.0))[:, None]
        if kind == "uniform_ball":
            if spec.radius is None:
                raise DomainError("uniform_ball needs a radius")
            shift = np.zeros(d) if spec.point is None else np.asarray(spec.point, dtype=float)
            return shift + _uniform_in_ball(rng, m, d, spec.radius)
        # stationary
        if self.kind in ("contracting_normal", "independence_normal"):
            return rng.normal((m, 1))
        if self.kind == "example1":
            return example1_stationary(rng, m)
        if self.kind == "example2":
            return (2.0 * rng.uniform(m) - 1.0)[:, None]
        raise DomainError(f"no exact stationary sampler for {self.kind}")


def builtin_kernel(cfg: KernelConfig) -> KernelSampler:
    """Materialise the oracles a kernel configuration refers to"""
    kind = cfg.kind
    if kind in ("ball_walk_metropolis", "hit_and_run"):
        d = cfg.d or 1
        membership = make_body(cfg.body or BodySpec(), d)
        log_density = None
        if kind == "ball_walk_metropolis":
            log_density = make_log_density(cfg.log_density or DensitySpec(), d, membership.outer_radius)
        return KernelSampler(cfg, membership=membership, log_density=log_density)
    if kind == "finite_chain":
        from mcmc.finite_chain import make_example, stationary_distribution
        from utils.matrix_io import read_matrix

        if cfg.toy is not None:
            chain, _, _ = make_example(cfg.toy)
            matrix, pi = chain.matrix, chain.pi
        else:
            matrix = read_matrix(cfg.matrix_path)
            pi = stationary_distribution(matrix)
        cumulative = np.cumsum(matrix.dense(), axis=1)
        return KernelSampler(cfg, cumulative=cumulative, pi=pi)
    if kind == "toy_chain":
        from mcmc.finite_chain import make_example

        pi = None
        if cfg.toy.num_states <= config.MAX_DENSE_STATES:
            pi = np.asarray(make_example(cfg.toy)[0].pi)
        return KernelSampler(cfg, pi=pi)
    return KernelSampler(cfg)
