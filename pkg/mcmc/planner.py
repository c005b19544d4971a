"""
Certified run plans: step size, burn-in, sample size and the error bound they buy.

The application constants are hard-coded. The log-concave branch folds the density-norm factor exp(2Lr) into the
Lr term of the burn-in.
"""
import logging
import math
from typing import Optional

import config
from mcmc.bound_calculus import (ceil_int, est_upper, gap_from_conductance, metro_gap_lower,
                                 optimize_beta_hat, sample_size_for_eps, suggest_burnin_general,
                                 uniform_start_density_norm)
from models.errors import DomainError
from models.schemas import (BurninInputs, ConvexBodyProblem, GapParams, LogConcaveProblem,
                            NormalsPlan, Plan)

logger = logging.getLogger(__name__)

LOGCONCAVE_BURNIN = 5.92e6
LOGCONCAVE_LINEAR = 1089.0
LOGCONCAVE_QUADRATIC = 8.38e5
CONVEX_BURNIN = 4.51e15
CONVEX_LINEAR = 9.5e7
CONVEX_QUADRATIC = 6.4e15
P_INF_CONSTANT = 4.16


def _solve_for_n(linear: float, quadratic: float, eps: float) -> int:
    """Smallest n with linear/sqrt(n) + quadratic/n <= eps"""
    s = 2.0 * eps / (linear + math.sqrt(linear * linear + 4.0 * quadratic * eps))
    n = ceil_int(1.0 / (s * s))
    while linear / math.sqrt(n) + quadratic / n > eps:
        n += 1
    return n


# ---------------------------------------------------------------------------
# Log-concave densities on a ball
# ---------------------------------------------------------------------------

def _logconcave_scale(prob: LogConcaveProblem) -> float:
    return (prob.d + 1) * max(prob.r * prob.r * prob.L * prob.L, prob.d + 1)


def _logconcave_branch(prob: LogConcaveProblem) -> float:
    p, Lr = prob.p, prob.L * prob.r
    if p < 4.0:
        return p / (p - 2.0) * (Lr + 0.5 * math.log(32.0 * p / (p - 2.0)))
    return 2.0 * Lr + P_INF_CONSTANT


def logconcave_error_bound(prob: LogConcaveProblem, n: int) -> float:
    linear = LOGCONCAVE_LINEAR * math.sqrt(prob.d + 1) * max(prob.r * prob.L, math.sqrt(prob.d + 1))
    return linear / math.sqrt(n) + LOGCONCAVE_QUADRATIC * _logconcave_scale(prob) / n


def complexity_logconcave(prob: LogConcaveProblem, eps: float) -> float:
    """Upper bound on the total oracle cost to reach precision eps"""
    return _logconcave_scale(prob) * (4.8e6 / (eps * eps) + 1.2e6 * _logconcave_branch(prob))


def plan_logconcave(prob: LogConcaveProblem) -> Plan:
    d, r, L = prob.d, prob.r, prob.L
    delta = min(math.inf if L == 0.0 else 1.0 / L, r / math.sqrt(d + 1))
    scale = _logconcave_scale(prob)
    n0 = ceil_int(LOGCONCAVE_BURNIN * scale * _logconcave_branch(prob))

    n = error_bound = budget = complexity = None
    if prob.eps is not None:
        linear = LOGCONCAVE_LINEAR * math.sqrt(d + 1) * max(r * L, math.sqrt(d + 1))
        n = _solve_for_n(linear, LOGCONCAVE_QUADRATIC * scale, prob.eps)
        error_bound = logconcave_error_bound(prob, n)
        budget = float(n0 + n) + n
        complexity = complexity_logconcave(prob, prob.eps)

    logger.info(f"Log-concave plan d={d}, r={r}, L={L}, p={prob.p}: delta*={delta:.4g}, n0={n0}, n={n}")
    return Plan(label="logconcave", n0=n0, gap_lower=metro_gap_lower(d, r, L), delta=delta, n=n,
                error_bound=error_bound, oracle_budget=budget, complexity=complexity)


# ---------------------------------------------------------------------------
# Uniform distribution on a convex body
# ---------------------------------------------------------------------------

def _convex_branch(prob: ConvexBodyProblem) -> float:
    p, d_log_r = prob.p, prob.d * math.log(prob.r)
    if p < 4.0:
        return p / (2.0 * (p - 2.0)) * (d_log_r + math.log(32.0 * p / (p - 2.0)))
    return d_log_r + P_INF_CONSTANT


def convex_body_error_bound(prob: ConvexBodyProblem, n: int) -> float:
    dr = prob.d * prob.r
    return CONVEX_LINEAR * dr / math.sqrt(n) + CONVEX_QUADRATIC * dr * dr / n


def complexity_convex_body(prob: ConvexBodyProblem, eps: float) -> float:
    dr = prob.d * prob.r
    return dr * dr * (4e16 / (eps * eps) + 5e15 * _convex_branch(prob))


def membership_calls_per_step(r: float, eps0: float) -> float:
    """Expected oracle calls of one hit-and-run step with chord precision eps0"""
    return 3.0 * math.log2(2.0 * r / eps0) + 8.0


def plan_convex_body(prob: ConvexBodyProblem) -> Plan:
    dr = prob.d * prob.r
    gap_lower = gap_from_conductance(2.0 ** -25 / dr, lazy=True)
    n0 = ceil_int(CONVEX_BURNIN * dr * dr * _convex_branch(prob))
    eps0 = prob.eps0 if prob.eps0 is not None else config.CHORD_EPS_REL * prob.r
    per_step = membership_calls_per_step(prob.r, eps0)

    n = error_bound = budget = complexity = None
    if prob.eps is not None:
        n = _solve_for_n(CONVEX_LINEAR * dr, CONVEX_QUADRATIC * dr * dr, prob.eps)
        error_bound = convex_body_error_bound(prob, n)
        budget = per_step * (n0 + n) + n
        complexity = complexity_convex_body(prob, prob.eps)

    logger.info(f"Convex body plan d={prob.d}, r={prob.r}, p={prob.p}: n0={n0}, n={n}")
    return Plan(label="convex_body", n0=n0, gap_lower=gap_lower, n=n, error_bound=error_bound,
                oracle_budget=budget, complexity=complexity, extras={"membership_per_step": per_step})


# ---------------------------------------------------------------------------
# Contracting normals and the small worked examples
# ---------------------------------------------------------------------------

def plan_contracting_normals(theta: float, x0: float = 0.0, delta_init: float = 0.1,
                             p: float = 2.1, eps: float = 0.01) -> NormalsPlan:
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if not eps > 0.0:
        raise DomainError(f"eps must be positive, got {eps}")
    c_star, beta_hat = optimize_beta_hat(theta)
    density_norm = uniform_start_density_norm(x0, delta_init)
    n0 = suggest_burnin_general(BurninInputs(p=p, density_norm=density_norm), GapParams(beta=beta_hat))
    n = sample_size_for_eps(beta_hat, eps)
    return NormalsPlan(label="contracting_normals", n0=n0, gap_lower=1.0 - beta_hat, n=n,
                       error_bound=est_upper(n, 0, beta_hat, 1.0, p), oracle_budget=float(n0 + 2 * n),
                       theta=theta, c_star=c_star, beta_hat=beta_hat, density_norm=density_norm)


def example1_mse_bound(n: int) -> float:
    return 48.0 / (23.0 * n) + 1152.0 / (529.0 * n * n)


def example2_mse_bounds(n: int):
    """(lower, upper, exact) MSE of the lazy example-2 chain for the u integrand"""
    return 3.0 / n - 16.0 / n ** 2, 4.0 / n + 8.0 / n ** 2, 3.0 / n - 4.0 * (1.0 - 2.0 ** -n) / n ** 2


def independence_mse_bound(xi: float, n: int) -> float:
    return 2.0 * xi / n + 2.0 * xi * xi / (n * n)


def plan_worked_example(which: str, delta: float = 1e-3, xi: Optional[float] = None,
                        x0: float = 0.0, n: Optional[int] = None) -> Plan:
    """Burn-in and MSE-root bounds for the three small chains that run end to end"""
    if not delta > 0.0:
        raise DomainError(f"delta must be positive, got {delta}")
    extras = {}
    lower = upper = None

    if which == "example1":
        if not delta < 2.0 / 3.0:
            raise DomainError(f"example1 needs delta in (0, 2/3), got {delta}")
        alpha = 1.0 / 24.0
        n0 = suggest_burnin_general(BurninInputs(p=2.0, density_norm=4.0 / (3.0 * delta) - 1.0),
                                    GapParams(beta=alpha, alpha=alpha, M=1.0))
        gap_lower = 1.0 - alpha
        if n is not None:
            upper = math.sqrt(example1_mse_bound(n))
    elif which == "example2":
        if not delta < 1.0:
            raise DomainError(f"example2 needs delta in (0, 1), got {delta}")
        n0 = suggest_burnin_general(BurninInputs(p=2.0, density_norm=2.0 / delta - 1.0),
                                    GapParams(beta=0.5, alpha=0.5, M=3.0))
        gap_lower = 0.5
        if n is not None:
            mse_lower, mse_upper, exact = example2_mse_bounds(n)
            upper = math.sqrt(mse_upper)
            lower = math.sqrt(max(mse_lower, 0.0))
            extras["exact_error"] = math.sqrt(exact)
    elif which == "independence_normal":
        if xi is None or not xi > 1.0:
            raise DomainError(f"independence_normal needs xi > 1, got {xi}")
        n0 = max(ceil_int(xi * (math.log(1.0 / delta) + (x0 + delta) ** 2 / 2.0 + 0.23)), 0)
        gap_lower = 1.0 / xi
        if n is not None:
            upper = math.sqrt(independence_mse_bound(xi, n))
            extras["tv_after_n"] = (1.0 - 1.0 / xi) ** n
    else:
        raise DomainError(f"unknown worked example {which}")

    logger.info(f"{which}: n0={n0}, n={n}, bound={upper}")
    return Plan(label=which, n0=n0, gap_lower=gap_lower, delta=delta, n=n, error_bound=upper,
                error_lower=lower, oracle_budget=None if n is None else float(n0 + 2 * n), extras=extras)
