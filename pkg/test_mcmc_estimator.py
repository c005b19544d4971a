#!/usr/bin/env python3
"""
Tests for the replication harness: empirical MSE against closed forms, determinism and certification
"""

import math

import pytest

from mcmc.bound_calculus import w_factor
from mcmc.finite_chain import (analytic_example_error, bounds_finite, example_constant, example_gaps,
                               suggest_burnin_finite)
from mcmc.mcmc_estimator import build_integrand, certify, default_true_value, empirical_mse, run_estimate
from mcmc.sampler_core import builtin_kernel
from models.errors import DomainError
from models.schemas import (BodySpec, DensitySpec, EstimateReport, InitialSpec, IntegrandSpec, KernelConfig,
                            RunConfig, ToySpec)

# Fixed seeds make these deterministic; 4 standard errors keeps the quick runs far from the edge
TOLERANCE_SIGMAS = 4.0
# full-size runs use 10^5 replications at the certification threshold
FULL_REPLICATIONS = 100000
FULL_SIGMAS = 3.0


def within_sigmas(report: EstimateReport, expected: float, sigmas: float = TOLERANCE_SIGMAS) -> bool:
    return abs(report.empirical_mse - expected) <= sigmas * report.mse_std_error


def hypercube_run(replications: int) -> RunConfig:
    return RunConfig(kernel=KernelConfig(kind="toy_chain", toy=ToySpec(family="hypercube", d=5)),
                     initial=InitialSpec(kind="point", state=0),
                     f=IntegrandSpec(name="u1"), n=100, replications=replications, seed=7)


def test_hypercube_mse_matches_closed_form():
    cfg = hypercube_run(20000)
    report = empirical_mse(cfg)
    expected = analytic_example_error(cfg.kernel.toy, 100, 0) ** 2
    assert report.true_value == 0.0
    assert within_sigmas(report, expected), (report.empirical_mse, expected)


@pytest.mark.slow
def test_hypercube_mse_matches_closed_form_full():
    cfg = hypercube_run(FULL_REPLICATIONS)
    report = empirical_mse(cfg)
    expected = analytic_example_error(cfg.kernel.toy, 100, 0) ** 2
    assert report.replications == FULL_REPLICATIONS
    assert within_sigmas(report, expected, FULL_SIGMAS), (report.empirical_mse, expected)


def test_lazy_example2_mse_matches_closed_form():
    n = 50
    cfg = RunConfig(kernel=KernelConfig(kind="example2", lazy=True),
                    initial=InitialSpec(kind="uniform_interval", radius=1e-3),
                    f=IntegrandSpec(name="example2_u"), n=n, n0=13, replications=20000, seed=11)
    report = empirical_mse(cfg)
    expected = 3.0 / n - 4.0 * (1.0 - 2.0 ** -n) / n ** 2
    assert within_sigmas(report, expected), (report.empirical_mse, expected)


def test_contracting_normal_stationary_mse():
    theta, n = 0.5, 20
    cfg = RunConfig(kernel=KernelConfig(kind="contracting_normal", theta=theta),
                    initial=InitialSpec(kind="stationary"),
                    f=IntegrandSpec(name="identity"), n=n, replications=20000, seed=3)
    report = empirical_mse(cfg)
    assert within_sigmas(report, w_factor(n, theta) / n ** 2)


def test_threads_do_not_change_results():
    base = dict(kernel=KernelConfig(kind="contracting_normal", theta=0.8),
                initial=InitialSpec(kind="point", point=[2.0]),
                f=IntegrandSpec(name="identity"), n=30, n0=5, replications=500, chunk_size=64, seed=99)
    single = empirical_mse(RunConfig(threads=1, **base))
    pooled = empirical_mse(RunConfig(threads=4, **base))
    assert single.empirical_mse == pooled.empirical_mse
    assert single.mean_estimate == pooled.mean_estimate
    assert single.config_hash == pooled.config_hash


def test_run_estimate_reproduces_replications():
    cfg = RunConfig(kernel=KernelConfig(kind="example1"), initial=InitialSpec(kind="point", point=[0.5]),
                    f=IntegrandSpec(name="identity"), n=25, n0=2, replications=5, chunk_size=1, seed=5)
    report = empirical_mse(cfg)
    singles = [run_estimate(cfg, i) for i in range(5)]
    assert report.mean_estimate == pytest.approx(math.fsum(singles) / 5, rel=1e-12)
    assert run_estimate(cfg, 3) == run_estimate(cfg, 3)
    assert report.true_value == pytest.approx(13.0 / 24.0)


def test_constant_integrand_has_zero_error():
    cfg = RunConfig(kernel=KernelConfig(kind="example2"), initial=InitialSpec(kind="stationary"),
                    f=IntegrandSpec(name="constant", value=0.25), n=10, replications=50)
    report = empirical_mse(cfg)
    assert report.empirical_mse == 0.0 and report.mse_std_error == 0.0
    assert certify(report, (0.0, 0.0)).passed


def test_oracle_calls_are_counted():
    R, n, n0 = 40, 15, 5
    # a wide step sends many proposals outside the ball; each still costs one density call
    cfg = RunConfig(kernel=KernelConfig(kind="ball_walk_metropolis", d=2, delta=0.9,
                                        body=BodySpec(name="ball", r=1.0),
                                        log_density=DensitySpec(name="gaussian")),
                    f=IntegrandSpec(name="coordinate", index=1), n=n, n0=n0, replications=R, chunk_size=16)
    report = empirical_mse(cfg)
    assert report.oracle_calls.f == R * n
    assert report.oracle_calls.membership == R * (n + n0)
    assert report.oracle_calls.rho == R * (n + n0)
    assert report.oracle_calls.rho_init == R


def test_missing_true_value_is_an_error():
    cfg = RunConfig(kernel=KernelConfig(kind="ball_walk_metropolis", d=1, delta=0.5,
                                        body=BodySpec(name="ball", r=1.0),
                                        log_density=DensitySpec(name="gaussian", center=0.3)),
                    f=IntegrandSpec(name="identity"), n=5, replications=4)
    with pytest.raises(DomainError):
        empirical_mse(cfg)
    assert empirical_mse(cfg, true_value=0.1).true_value == 0.1


def test_default_true_values():
    square = RunConfig(kernel=KernelConfig(kind="independence_normal", xi=2.0),
                       f=IntegrandSpec(name="square"), n=1)
    assert default_true_value(square, builtin_kernel(square.kernel)) == 1.0
    chain = RunConfig(kernel=KernelConfig(kind="finite_chain", toy=ToySpec(family="circle", T=5)),
                      f=IntegrandSpec(name="finite_vector", values=[1.0, 2.0, 3.0, 4.0, 5.0]), n=1)
    assert default_true_value(chain, builtin_kernel(chain.kernel)) == pytest.approx(3.0)


def test_integrand_validation():
    sampler = builtin_kernel(KernelConfig(kind="example1"))
    with pytest.raises(DomainError):
        build_integrand(IntegrandSpec(name="u1"), sampler)
    with pytest.raises(DomainError):
        build_integrand(IntegrandSpec(name="coordinate", index=3), sampler)


def test_certify_on_root_scale():
    report = EstimateReport(mean_estimate=0.0, empirical_mse=0.04, mse_std_error=0.004, replications=100,
                            n=10, n0=0, seed=1, config_hash="abc")
    # root 0.2 with standard error 0.004 / 0.4 = 0.01
    verdict = certify(report, (0.0, 0.19))
    assert verdict.passed
    assert verdict.root_std_error == pytest.approx(0.01)
    assert not certify(report, (0.0, 0.15)).passed
    assert not certify(report, (0.25, 1.0)).passed
    assert certify(report, (0.0, math.inf)).passed
    assert verdict.report.bound_upper == 0.19 and report.bound_upper is None
    assert certify(report, (0.0, 0.19), sigma=0.5).passed is False


def toy_run(spec: ToySpec, n: int, n0: int, replications: int, seed: int) -> RunConfig:
    return RunConfig(kernel=KernelConfig(kind="toy_chain", toy=spec), initial=InitialSpec(kind="point"),
                     f=IntegrandSpec(name="u1"), n=n, n0=n0, replications=replications, seed=seed)


def root_bounds(spec: ToySpec, n: int, n0: int):
    lower, upper = bounds_finite(example_gaps(spec), example_constant(spec), n, n0)
    return math.sqrt(lower), math.sqrt(upper)


def test_star_certifies_at_suggested_burnin():
    spec = ToySpec(family="star", T=100000, theta=0.1)
    n0 = suggest_burnin_finite(example_constant(spec), example_gaps(spec).beta)
    assert n0 == 58
    for seed, n in enumerate((10, 100, 1000)):
        report = empirical_mse(toy_run(spec, n, n0, 4000, seed))
        verdict = certify(report, root_bounds(spec, n, n0))
        assert verdict.passed, (n, verdict.root_mse, verdict.lower, verdict.upper)


def test_halved_upper_bound_fails_certification():
    spec = ToySpec(family="circle", T=9)
    n = 50
    n0 = suggest_burnin_finite(example_constant(spec), example_gaps(spec).beta)
    report = empirical_mse(toy_run(spec, n, n0, 4000, 41))
    lower, upper = root_bounds(spec, n, n0)
    assert certify(report, (lower, upper)).passed
    assert not certify(report, (lower, upper / 2.0)).passed


if __name__ == "__main__":
    tests = [
        test_hypercube_mse_matches_closed_form,
        test_hypercube_mse_matches_closed_form_full,
        test_lazy_example2_mse_matches_closed_form,
        test_contracting_normal_stationary_mse,
        test_threads_do_not_change_results,
        test_run_estimate_reproduces_replications,
        test_constant_integrand_has_zero_error,
        test_oracle_calls_are_counted,
        test_missing_true_value_is_an_error,
        test_default_true_values,
        test_integrand_validation,
        test_certify_on_root_scale,
        test_star_certifies_at_suggested_burnin,
        test_halved_upper_bound_fails_certification,
    ]
    for test in tests:
        print(f"🧪 {test.__name__}")
        test()
        print(f"✅ {test.__name__} passed")
    print("\n🎉 All estimator tests passed!")
