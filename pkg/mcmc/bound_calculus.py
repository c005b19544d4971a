import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

import config
from models.errors import DomainError, GapExhausted
from models.schemas import BurninInputs, GapParams, PlanCurve, PlanRow

logger = logging.getLogger(__name__)

# Relative width of the optimal burn-in bracket
ETA = 1e-3
# Below this value of n(1 - a) the closed forms lose digits to cancellation
_CANCELLATION_GUARD = 0.1
_DIRECT_SUM_LIMIT = 1_000_000


def ceil_int(x: float) -> int:
    """Ceiling that forgives floating noise just above an integer"""
    nearest = round(x)
    if abs(x - nearest) <= 1e-12 * max(1.0, abs(x)):
        return int(nearest)
    return int(math.ceil(x))


def _check_rate(name: str, value: float, low: float = 0.0):
    if not low <= value < 1.0:
        raise DomainError(f"{name} must lie in [{low}, 1), got {value}")


def _check_p(p: float, allow_two: bool = True):
    if allow_two and p == 2.0:
        return
    if not p > 2.0:
        raise DomainError(f"p must be {'2 or ' if allow_two else ''}in (2, inf], got {p}")


def _log_inverse(rate: float) -> float:
    """log(1/rate), refusing rates that leave no gap"""
    if not rate < 1.0:
        logger.error(f"Rate {rate} leaves no spectral gap")
        raise GapExhausted(f"rate {rate} >= 1 gives no contraction")
    if rate <= 0.0:
        return math.inf
    return -math.log(rate)


def _geometric_sum(log_z: float, m: int) -> float:
    """sum_{j=1}^{m} z^j for z = exp(log_z)"""
    if m <= 0 or log_z == -math.inf:
        return 0.0
    if log_z == 0.0:
        return float(m)
    return math.exp(log_z) * math.expm1(m * log_z) / math.expm1(log_z)


def _double_geometric(log_x: float, log_y: float, n: int) -> float:
    """sum_{j=1}^{n-1} x^j sum_{k=j+1}^{n} y^k for y < 1"""
    if n < 2:
        return 0.0
    head = math.exp(log_y) * _geometric_sum(log_x + log_y, n - 1)
    if log_x > 0.0:
        # x > 1: fold y^(n+1) into the exponent so x^n never overflows on its own
        tail = (math.exp((n + 1) * log_y + n * log_x)
                - math.exp((n + 1) * log_y + log_x)) / math.expm1(log_x)
    else:
        tail = math.exp((n + 1) * log_y) * _geometric_sum(log_x, n - 1)
    return (head - tail) / -math.expm1(log_y)


# ---------------------------------------------------------------------------
# W, U, V factors
# ---------------------------------------------------------------------------

def w_factor(n: int, a: float) -> float:
    """W(n, a) = sum_{j,k=1}^{n} a^|j-k|"""
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    _check_rate("a", a, low=-1.0)
    if a == 0.0:
        return float(n)
    if n * (1.0 - a) < _CANCELLATION_GUARD and n <= _DIRECT_SUM_LIMIT:
        m = np.arange(1, n, dtype=float)
        return float(n + 2.0 * math.fsum((n - m) * a ** m))
    return (n * (1.0 - a * a) - 2.0 * a * (1.0 - a ** n)) / (1.0 - a) ** 2


def u_factor(a: float, n: int, direct: bool = False) -> float:
    """U(a, n) = sum_j a^j + 2 sum_{j<k} a^k, capped by 2/(1-a)^2"""
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    _check_rate("a", a)
    if a == 0.0:
        return 0.0
    if direct or (n * (1.0 - a) < _CANCELLATION_GUARD and n <= _DIRECT_SUM_LIMIT):
        k = np.arange(1, n + 1, dtype=float)
        powers = a ** k
        return math.fsum(powers) + 2.0 * math.fsum((k[1:] - 1.0) * powers[1:])
    single = a * (1.0 - a ** n) / (1.0 - a)
    double = (a * a * (1.0 - a ** (n - 1)) / (1.0 - a) - (n - 1) * a ** (n + 1)) / (1.0 - a)
    return single + 2.0 * double


def _v_exponents(p: float):
    """(coefficient, single exponent, x exponent, y exponent) of the active branch"""
    if p < 4.0:
        return 2.0 ** (4.0 / p), 2.0 * (1.0 - 2.0 / p), 2.0 * (1.0 - 3.0 / p), 2.0 / p
    return 2.0, 1.0, 2.0 / p, 1.0 - 2.0 / p


def v_factor(beta: float, n: int, p: float, direct: bool = False) -> float:
    """V(beta, n, p); p = math.inf evaluates the limiting exponents"""
    _check_p(p, allow_two=False)
    _check_rate("beta", beta)
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    if beta == 0.0:
        return 0.0
    coefficient, single_exp, x_exp, y_exp = _v_exponents(p)
    log_beta = math.log(beta)
    if direct or (n * y_exp * -log_beta < _CANCELLATION_GUARD and n <= _DIRECT_SUM_LIMIT):
        j = np.arange(1, n + 1, dtype=float)
        tails = np.cumsum(np.exp(y_exp * log_beta * j)[::-1])[::-1]
        first = coefficient * math.fsum(np.exp(single_exp * log_beta * j))
        second = math.fsum(np.exp(x_exp * log_beta * j[:-1]) * tails[1:])
    else:
        first = coefficient * _geometric_sum(single_exp * log_beta, n)
        second = _double_geometric(x_exp * log_beta, y_exp * log_beta, n)
    return 4.0 * (first + 2.0 ** (3.0 + 2.0 / p) * second)


def v_factor_cap(beta: float, p: float) -> float:
    """64p/((p-2)(1-beta)^2), written so that p = inf gives 64/(1-beta)^2"""
    return 64.0 / ((1.0 - 2.0 / p) * (1.0 - beta) ** 2)


def lp_norm_decay(beta: float, n: int, p: float) -> float:
    """Interpolated bound on ||P^n - S||_{L_p -> L_p}"""
    if not 1.0 < p < math.inf:
        raise DomainError(f"p must lie in (1, inf), got {p}")
    _check_rate("beta", beta)
    if p < 2.0:
        return 2.0 ** (2.0 / p) * beta ** (2.0 * n * (p - 1.0) / p)
    return 2.0 ** (2.0 * (p - 1.0) / p) * beta ** (2.0 * n / p)


# ---------------------------------------------------------------------------
# Burn-in recipes
# ---------------------------------------------------------------------------

def _log_decay(beta: float, p: float) -> float:
    """log r where r is the per-step decay of the initial bias"""
    if beta == 0.0:
        return -math.inf
    if 2.0 < p < 4.0:
        return 2.0 * (1.0 - 2.0 / p) * math.log(beta)
    return math.log(beta)


def suggest_burnin_general(inputs: BurninInputs, g: GapParams) -> int:
    """Burn-in neutralising the initial bias; a given inputs.C replaces the constant built from density_norm"""
    p = inputs.p
    if p == 2.0:
        if g.alpha is None or g.M is None:
            raise DomainError("p = 2 needs the L1-exponential pair (alpha, M)")
        rate = math.sqrt(g.alpha) if g.normal_op else g.alpha
        argument = g.M * inputs.density_norm
        scale = 1.0
    elif p < 4.0:
        rate = g.beta
        argument = 32.0 * p / (p - 2.0) * inputs.density_norm
        scale = p / (2.0 * (p - 2.0))
    else:
        rate = g.beta
        argument = 64.0 * inputs.density_norm
        scale = 1.0

    log_inv = _log_inverse(rate)
    if inputs.C is not None:
        argument = inputs.C
    if argument <= 1.0:
        return 0
    n0 = max(ceil_int(scale * math.log(argument) / log_inv), 0)
    logger.info(f"Suggested burn-in {n0} for p={p}, rate={rate}, density norm {inputs.density_norm:.4g}")
    return n0


def suggest_burnin_from_constant(beta: float, C: float, p: float) -> int:
    """Smallest n0 with C r^n0 <= 1, i.e. the burn-in that neutralises an aggregate constant C"""
    _check_p(p)
    log_inv = -_log_decay(beta, p) if beta > 0.0 else math.inf
    _log_inverse(beta)
    if C <= 1.0:
        return 0
    return max(ceil_int(math.log(C) / log_inv), 0)


def _log_est_sq(n: float, n0: float, beta: float, C: float, p: float) -> float:
    log_gap = math.log1p(-beta)
    first = math.log(2.0) - math.log(n) - log_gap
    if C == 0.0:
        return first
    if n0 == 0:
        decay = 0.0
    else:
        log_r = _log_decay(beta, p)
        if log_r == -math.inf:
            return first
        decay = n0 * log_r
    second = math.log(2.0 * C) + decay - 2.0 * math.log(n) - 2.0 * log_gap
    return float(np.logaddexp(first, second))


def est_upper(n: int, n0: int, beta: float, C: float, p: float) -> float:
    """Root-MSE upper estimate sqrt(2/(n(1-b)) + 2 C r^n0 / (n^2 (1-b)^2))"""
    _check_p(p)
    _log_inverse(beta)
    if C < 0.0:
        raise DomainError(f"C must be non-negative, got {C}")
    if n < 1 or n0 < 0:
        raise DomainError(f"need n >= 1 and n0 >= 0, got n={n}, n0={n0}")
    return math.exp(0.5 * _log_est_sq(n, n0, beta, C, p))


def minimize_burnin(N: int, beta: float, C: float, p: float,
                    scan_points: Optional[int] = None) -> Tuple[int, PlanCurve]:
    """Burn-in n0 in [0, N-1] minimising est_upper(N - n0, n0, ...)"""
    if N < 2:
        raise DomainError(f"budget N must be at least 2, got {N}")
    _check_p(p)
    log_inv = _log_inverse(beta)
    if C < 0.0:
        raise DomainError(f"C must be non-negative, got {C}")

    def objective(n0: float) -> float:
        return _log_est_sq(N - n0, n0, beta, C, p)

    if C == 0.0 or beta == 0.0:
        grid = np.array([0])
        n_opt = 0
    else:
        points = scan_points or config.BURNIN_SCAN_POINTS
        grid = np.unique(np.concatenate(([0.0], np.round(np.geomspace(1, N - 1, points))))).astype(int)
        values = np.array([objective(int(k)) for k in grid])
        best = int(np.argmin(values))
        lo = int(grid[max(best - 1, 0)])
        hi = int(grid[min(best + 1, len(grid) - 1)])
        centre = int(grid[best])
        if hi - lo > 2:
            result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 0.5})
            centre = int(round(result.x))
        candidates = {int(grid[best])}
        candidates.update(k for k in range(centre - 2, centre + 3) if 0 <= k <= N - 1)
        n_opt = min(sorted(candidates), key=objective)

    suggested = suggest_burnin_from_constant(beta, C, p) if beta > 0.0 else 0
    feasible = suggested < N
    if not feasible:
        logger.warning(f"Suggested burn-in {suggested} does not fit into the budget N={N}")

    conditions_hold = None
    in_bracket = None
    if C > 0.0 and beta > 0.0 and not 2.0 < p < 4.0:
        lower = math.log(C) / log_inv
        upper = (1.0 + ETA) * lower
        slack = log_inv - (1.0 - beta)
        reasonable_C = ETA * math.log(C) > math.log(log_inv / (1.0 - beta))
        reasonable_N = slack > 0.0 and N > upper + 2.0 / slack
        conditions_hold = reasonable_C and reasonable_N
        in_bracket = math.floor(lower) <= n_opt <= math.ceil(upper)
        if conditions_hold and not in_bracket:
            logger.warning(f"Optimal burn-in {n_opt} left the bracket [{lower:.1f}, {upper:.1f}]")
        elif not conditions_hold:
            logger.warning(f"Unimodality conditions fail for N={N}, beta={beta}; relying on the scan")

    rows = []
    for k in sorted(set(int(v) for v in grid) | {n_opt}):
        est = math.exp(0.5 * objective(k))
        if math.isfinite(est):
            rows.append(PlanRow(n0=k, n=N - k, est=est))
    curve = PlanCurve(N=N, rows=rows, suggested_n0=suggested, conditions_hold=conditions_hold,
                      in_bracket=in_bracket, feasible=feasible)
    logger.info(f"Optimal burn-in {n_opt} for N={N}, beta={beta}, C={C:.3g}, p={p}")
    return n_opt, curve


def sample_size_for_eps(beta: float, eps: float) -> int:
    _check_rate("beta", beta)
    if not eps > 0.0:
        raise DomainError(f"eps must be positive, got {eps}")
    return ceil_int((1.0 + math.sqrt(1.0 + 4.0 * eps * eps)) / ((1.0 - beta) * eps * eps))


def bias_bound(beta: float, n: int, n0: int, p: float, density_norm: float) -> float:
    """Bound on |e_nu^2 - e_pi^2| for ||f||_p <= 1"""
    _check_p(p, allow_two=False)
    _check_rate("beta", beta)
    decay = 1.0 if n0 == 0 else math.exp(n0 * _log_decay(beta, p))
    return v_factor_cap(beta, p) * decay * density_norm / n ** 2


def stationary_worst_error(lam: float, N: int) -> float:
    """sup over the unit ball of e_pi(S_N, f) when every step is averaged"""
    return math.sqrt(w_factor(N, lam)) / N


def lazy_beta(lambda_max: float) -> float:
    """Operator norm bound (1 + Lambda)/2 of the lazy chain"""
    return (1.0 + lambda_max) / 2.0


def autocorrelation_time(beta1: float) -> float:
    _check_rate("beta1", beta1, low=-1.0)
    return (1.0 + beta1) / (1.0 - beta1)


# ---------------------------------------------------------------------------
# Contracting normals
# ---------------------------------------------------------------------------

def normal_upper_tail(z: float) -> float:
    """1 - Phi(z) through erfc, accurate in the far tail"""
    return 0.5 * float(erfc(z / math.sqrt(2.0)))


def baxendale_beta_hat(theta: float, c: float) -> float:
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if not c > 1.0:
        raise DomainError(f"c must exceed 1, got {c}")
    theta_sq = theta * theta
    c_sq = c * c
    sigma = math.sqrt(1.0 - theta_sq)
    lam = theta_sq + 2.0 * (1.0 - theta_sq) / (1.0 + c_sq)
    log_inv_lam = -math.log1p(-(1.0 - theta_sq) * (c_sq - 1.0) / (1.0 + c_sq))
    K = 2.0 + theta_sq * (c_sq - 1.0)
    B = 2.0 * (normal_upper_tail(theta * c / sigma) - normal_upper_tail((1.0 + theta) * c / sigma))
    a = 1.0 + math.log((K - B) / (1.0 - B)) / log_inv_lam
    return max(lam, math.exp(math.log1p(-B) / a))


def optimize_beta_hat(theta: float, c_min: float = 1.01, c_max: float = 1e3) -> Tuple[float, float]:
    """Minimise baxendale_beta_hat over c; returns (c_star, beta_hat_star)"""
    grid = np.geomspace(c_min, c_max, 400)
    values = [baxendale_beta_hat(theta, c) for c in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    result = minimize_scalar(lambda c: baxendale_beta_hat(theta, c), bounds=(lo, hi),
                             method="bounded", options={"xatol": 1e-10})
    c_star = float(result.x)
    beta_hat = baxendale_beta_hat(theta, c_star)
    if values[best] < beta_hat:
        c_star, beta_hat = float(grid[best]), float(values[best])
    logger.info(f"theta={theta}: c*={c_star:.6f}, beta_hat={beta_hat:.6f}")
    return c_star, beta_hat


def uniform_start_density_norm(x0: float, delta: float) -> float:
    """Upper bound on ||d nu/d pi - 1||_inf for nu uniform on [x0 - delta, x0 + delta], pi = N(0, 1)"""
    if not delta > 0.0:
        raise DomainError(f"delta must be positive, got {delta}")
    return math.sqrt(math.pi / 2.0) * math.exp((abs(x0) + delta) ** 2 / 2.0) / delta


# ---------------------------------------------------------------------------
# Spectral gap lower bounds
# ---------------------------------------------------------------------------

def gap_from_conductance(phi: float, lazy: bool = False) -> float:
    """Cheeger: 1 - Lambda >= phi^2/2, and phi^2/4 for the lazy version"""
    if not 0.0 <= phi <= 1.0:
        raise DomainError(f"conductance must lie in [0, 1], got {phi}")
    return phi * phi / (4.0 if lazy else 2.0)


def metro_gap_lower(d: int, r: float, L: float, delta: Optional[float] = None, l: float = 0.3) -> float:
    """Gap lower bound of the lazy Metropolis delta-ball walk on an r-ball.

    Without delta the bound at delta* = min(1/L, r/sqrt(d+1)) is returned.
    """
    if d < 1 or not r > 0.0 or L < 0.0:
        raise DomainError(f"need d >= 1, r > 0, L >= 0, got d={d}, r={r}, L={L}")
    if delta is None:
        inverse_rl_sq = math.inf if L == 0.0 else 1.0 / (r * r * L * L)
        return 1.69e-6 / (d + 1) * min(inverse_rl_sq, 1.0 / (d + 1))
    if not 0.0 < delta <= r / math.sqrt(d + 1) * (1.0 + 1e-12):
        raise DomainError(f"delta={delta} exceeds r/sqrt(d+1) = {r / math.sqrt(d + 1):.6g}")
    local = (math.pi / 8.0) * l * l * delta * delta / (r * r * (d + 1))
    return l * l * math.exp(-2.0 * L * delta) / 256.0 * min(local, 1.0)


# ---------------------------------------------------------------------------
# Comparison bounds
# ---------------------------------------------------------------------------

def _doeblin(M: float, gamma: float, n: int, f_sup: float = 1.0) -> float:
    if M < 2.0 or not gamma > 0.0:
        raise DomainError("doeblin needs M >= 2 and gamma > 0")
    return 8.0 * (M - 1.0) * f_sup ** 2 / (n * gamma)


def _aldous_stationary(beta1: float, n: int) -> float:
    _check_rate("beta1", beta1, low=-1.0)
    gap = 1.0 - beta1
    return 2.0 / (n * gap) + 2.0 * math.exp(-n * gap) / (n * gap) ** 2


def _aldous_poisson(beta1: float, n0: int, inv_pi_sup: float, stationary_mse: float) -> float:
    _check_rate("beta1", beta1, low=-1.0)
    return stationary_mse * (1.0 + inv_pi_sup * math.exp(-n0 * (1.0 - beta1)))


def _niemiro_poka(beta: float, n: int, n0: int, chi: float, f_2: float = 1.0,
                  f_sup: Optional[float] = None, inv_pi_sup: Optional[float] = None) -> float:
    _check_rate("beta", beta)
    if f_sup is None:
        if inv_pi_sup is None:
            raise DomainError("niemiro_poka needs f_sup or inv_pi_sup")
        f_sup = math.sqrt(inv_pi_sup) * f_2
    gap = 1.0 - beta
    return ((1.0 + beta) / (n * gap) * f_2 ** 2
            + 2.0 * beta / (gap ** 2 * n ** 2) * f_2 ** 2
            + 2.0 * (1.0 + beta) * beta ** n0 * chi * f_sup * f_2 / (gap * n ** 2))


def _lovasz_simonovits(phi: float, n: int) -> float:
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"conductance must lie in (0, 1], got {phi}")
    return 4.0 / (phi * phi * n)


def _conductance_burnin(phi: float, n: int) -> float:
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"conductance must lie in (0, 1], got {phi}")
    return 100.0 / (phi * phi * n)


def _belloni(phi: float, R: float, n: int, n0: int, f_2: float = 1.0, f_sup: float = 1.0) -> float:
    if not 0.0 < phi <= 1.0 or R < 1.0:
        raise DomainError("belloni needs phi in (0, 1] and an R-warm start with R >= 1")
    return (4.0 / (phi * phi * n) * f_2 ** 2
            + 8.0 * math.sqrt(R) * (1.0 - phi * phi / 2.0) ** n0 * f_sup ** 2)


def _lezaud_mse(beta: float, beta1: float, n: int, n0: int, chi: float) -> float:
    _check_rate("beta", beta)
    _check_rate("beta1", beta1, low=-1.0)
    return 36.0 * (1.0 + beta ** n0 * chi) / (n * (1.0 - beta1))


LITERATURE_BOUNDS = {
    "doeblin": _doeblin,
    "aldous_stationary": _aldous_stationary,
    "aldous_poisson": _aldous_poisson,
    "niemiro_poka": _niemiro_poka,
    "lovasz_simonovits": _lovasz_simonovits,
    "conductance_burnin": _conductance_burnin,
    "belloni": _belloni,
    "lezaud_mse": _lezaud_mse,
}


def literature_bound(kind: str, **params) -> float:
    """MSE bound from the literature, reported next to ours for comparison only"""
    if kind not in LITERATURE_BOUNDS:
        raise DomainError(f"unknown literature bound: {kind}")
    if params.get("n", 1) < 1:
        raise DomainError("n must be positive")
    try:
        return float(LITERATURE_BOUNDS[kind](**params))
    except TypeError as e:
        raise DomainError(f"bad parameters for {kind}: {e}") from e


def conductance_burnin_length(phi: float, density_sup: float) -> int:
    """Burn-in log ||d nu/d pi||_inf / phi^2 that goes with the conductance_burnin bound"""
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"conductance must lie in (0, 1], got {phi}")
    return max(ceil_int(math.log(max(density_sup, 1.0)) / (phi * phi)), 0)


def confidence_bound(kind: str, **params) -> float:
    """Upper bound on P(|S - pi(f)| >= eps), clamped to [0, 1]"""
    eps = params.get("eps")
    if eps is None or not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if kind == "markov":
        mse = params.get("mse")
        if mse is None or mse < 0.0:
            raise DomainError("markov needs a non-negative mse")
        value = mse / (eps * eps)
    elif kind == "lezaud":
        n, beta1, chi = params.get("n"), params.get("beta1"), params.get("chi", 1.0)
        if n is None or beta1 is None:
            raise DomainError("lezaud needs n and beta1")
        _check_rate("beta1", beta1, low=-1.0)
        if chi < 0.0:
            raise DomainError("chi term must be non-negative")
        value = 3.0 * chi * math.exp(-n * (1.0 - beta1) * eps * eps / 12.0)
    else:
        raise DomainError(f"unknown confidence bound: {kind}")
    return min(max(value, 0.0), 1.0)


def sample_size_markov(beta: float, eps: float, alpha: float) -> int:
    """n with P(|S - pi(f)| >= eps) <= alpha through the Markov inequality"""
    _check_rate("beta", beta)
    return ceil_int(4.0 / (alpha * eps * eps * (1.0 - beta)))


def burnin_coupling(pi_min: float, beta: float, alpha: float) -> int:
    """n0 >= log(2 ||1/pi||_inf / alpha)/(1 - beta)"""
    _check_rate("beta", beta)
    if not pi_min > 0.0:
        raise DomainError("pi_min must be positive")
    return max(ceil_int(math.log(2.0 / (alpha * pi_min)) / (1.0 - beta)), 0)


def sample_size_lezaud(beta1: float, eps: float, alpha: float) -> int:
    _check_rate("beta1", beta1, low=-1.0)
    return ceil_int(12.0 * math.log(6.0 / alpha) / (eps * eps * (1.0 - beta1)))
