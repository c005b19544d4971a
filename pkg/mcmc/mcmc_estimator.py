import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Tuple

import numpy as np

import config
from mcmc.sampler_core import KernelSampler, RngStream, builtin_kernel, toy_u1
from models.errors import DomainError
from models.schemas import EstimateReport, IntegrandSpec, OracleCalls, RunConfig, Verdict

logger = logging.getLogger(__name__)


def build_integrand(spec: IntegrandSpec, sampler: KernelSampler) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised integrand over a batch of states"""
    name = spec.name
    if name == "constant":
        return lambda x: np.full(len(x), spec.value)
    if name == "u1":
        if sampler.cfg.toy is None:
            raise DomainError("u1 is only defined for toy chains")
        toy = sampler.cfg.toy
        return lambda x: toy_u1(toy, x)
    if name == "finite_vector":
        if not sampler.discrete or spec.values is None:
            raise DomainError("finite_vector needs a finite chain and a values list")
        values = np.asarray(spec.values, dtype=float)
        return lambda x: values[x]
    if sampler.discrete:
        if name == "identity":
            return lambda x: x.astype(float)
        if name == "square":
            return lambda x: x.astype(float) ** 2
        raise DomainError(f"integrand {name} does not apply to finite chains")
    if name == "identity":
        return lambda x: x[:, 0]
    if name == "square":
        return lambda x: np.sum(x * x, axis=1)
    if name == "coordinate":
        if spec.index >= sampler.dim:
            raise DomainError(f"coordinate {spec.index} out of range for dimension {sampler.dim}")
        return lambda x: x[:, spec.index]
    # example2_u: -1 on [-1, -1/2] and [0, 1/2), +1 elsewhere
    def example2_u(x):
        t = x[:, 0]
        negative = ((t >= -1.0) & (t <= -0.5)) | ((t >= 0.0) & (t < 0.5))
        return np.where(negative, -1.0, 1.0)
    return example2_u


def _symmetric_target(sampler: KernelSampler) -> bool:
    cfg = sampler.cfg
    if cfg.kind in ("contracting_normal", "independence_normal", "example2"):
        return True
    if cfg.kind == "hit_and_run":
        return True
    if cfg.kind == "ball_walk_metropolis":
        return cfg.log_density is None or cfg.log_density.center == 0.0
    return False


def default_true_value(cfg: RunConfig, sampler: KernelSampler) -> Optional[float]:
    """S(f) where a closed form or the stationary distribution provides it"""
    f = cfg.f
    if f.name == "constant":
        return f.value
    if f.name in ("u1", "example2_u"):
        return 0.0
    if f.name == "finite_vector" and sampler.pi is not None:
        return math.fsum(np.asarray(sampler.pi) * np.asarray(f.values, dtype=float))
    if f.name in ("identity", "coordinate") and _symmetric_target(sampler):
        return 0.0
    if f.name == "identity" and cfg.kernel.kind == "example1":
        return 13.0 / 24.0
    if f.name == "square" and cfg.kernel.kind in ("contracting_normal", "independence_normal"):
        return 1.0
    return None


def _run_chunk(cfg: RunConfig, sampler: KernelSampler, integrand: Callable, stream_id: int,
               size: int) -> Tuple[np.ndarray, OracleCalls]:
    rng = RngStream(cfg.seed, stream_id)
    calls = OracleCalls()
    x = sampler.sample_initial(cfg.initial, size, rng)
    aux = sampler.init_aux(x, calls)
    for _ in range(cfg.n0):
        x, aux = sampler.step(x, aux, rng, calls)
    total = np.zeros(size)
    for _ in range(cfg.n):
        x, aux = sampler.step(x, aux, rng, calls)
        total += integrand(x)
    calls.f += size * cfg.n
    return total / cfg.n, calls


def run_estimate(cfg: RunConfig, replication_index: int) -> float:
    """S_{n,n0}(f) for one replication, on stream replication_index"""
    sampler = builtin_kernel(cfg.kernel)
    integrand = build_integrand(cfg.f, sampler)
    estimates, _ = _run_chunk(cfg, sampler, integrand, replication_index, 1)
    return float(estimates[0])


def _jackknife_std_error(values: np.ndarray) -> float:
    count = len(values)
    if count < 2:
        return 0.0
    total = math.fsum(values)
    leave_one_out = (total - values) / (count - 1)
    centre = math.fsum(leave_one_out) / count
    spread = math.fsum((leave_one_out - centre) ** 2)
    return math.sqrt((count - 1) / count * spread)


def empirical_mse(cfg: RunConfig, true_value: Optional[float] = None) -> EstimateReport:
    """Mean of (S_{n,n0}(f) - S(f))^2 over independent replications"""
    sampler = builtin_kernel(cfg.kernel)
    integrand = build_integrand(cfg.f, sampler)
    if true_value is None:
        true_value = cfg.true_value
    if true_value is None:
        true_value = default_true_value(cfg, sampler)
    if true_value is None:
        logger.error(f"No reference value for integrand {cfg.f.name} on {cfg.kernel.kind}")
        raise DomainError("empirical_mse needs a true value for this integrand")

    R = cfg.replications
    chunks = [(k, start, min(start + cfg.chunk_size, R)) for k, start in enumerate(range(0, R, cfg.chunk_size))]
    logger.info(f"Running {R} replications of n={cfg.n}, n0={cfg.n0} on {cfg.kernel.kind} "
                f"in {len(chunks)} chunks with {cfg.threads} threads")

    estimates = np.empty(R)
    calls = OracleCalls()

    def work(chunk):
        stream_id, start, stop = chunk
        return start, stop, _run_chunk(cfg, sampler, integrand, stream_id, stop - start)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for start, stop, (values, chunk_calls) in pool.map(work, chunks):
            estimates[start:stop] = values
            calls.f += chunk_calls.f
            calls.rho += chunk_calls.rho
            calls.rho_init += chunk_calls.rho_init
            calls.membership += chunk_calls.membership

    squared = (estimates - true_value) ** 2
    report = EstimateReport(
        mean_estimate=math.fsum(estimates) / R,
        empirical_mse=math.fsum(squared) / R,
        mse_std_error=_jackknife_std_error(squared),
        replications=R,
        n=cfg.n,
        n0=cfg.n0,
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        true_value=true_value,
        oracle_calls=calls,
    )
    logger.info(f"Empirical MSE {report.empirical_mse:.6g} +/- {report.mse_std_error:.3g}")
    return report


def certify(report: EstimateReport, bounds: Tuple[float, float], sigma: Optional[float] = None) -> Verdict:
    """Check lower - k*se <= sqrt(empirical MSE) <= upper + k*se on the root scale"""
    k = config.SIGMA_THRESHOLD if sigma is None else sigma
    lower, upper = bounds
    root = math.sqrt(report.empirical_mse)
    root_se = report.mse_std_error / (2.0 * root) if root > 0.0 else 0.0
    if math.isinf(upper):
        passed = True
    else:
        passed = lower - k * root_se <= root <= upper + k * root_se
    if not passed:
        logger.warning(f"Root MSE {root:.6g} outside [{lower:.6g}, {upper:.6g}] at {k} sigma")
    return Verdict(passed=passed, root_mse=root, root_std_error=root_se, lower=lower, upper=upper,
                   sigma=k, report=report.model_copy(update={"bound_lower": lower, "bound_upper": upper}))
