#!/usr/bin/env python3
"""
Tests for the vectorised samplers, chord search and the L1 contraction quadrature
"""

import math

import numpy as np
import pytest
from scipy import stats

from mcmc.sampler_core import (KernelSampler, RngStream, ball_walk_step, builtin_kernel, chord_bisect,
                               example1_stationary, example1_step, hit_and_run_step, l1_contraction_1d,
                               lazy_step, make_body, make_log_density, metropolis_step, sample_direction,
                               spot_check_lipschitz, toy_step)
from models.errors import DegenerateChord, NonConvergent
from models.schemas import (BodySpec, DensitySpec, InitialSpec, KernelConfig, LogDensityOracle, MembershipOracle,
                            OracleCalls, ToySpec)

P_LEVEL = 1e-3


def test_streams_are_reproducible_and_independent():
    a = RngStream(42, 3).uniform(5)
    b = RngStream(42, 3).uniform(5)
    c = RngStream(42, 4).uniform(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_directions_are_unit_vectors():
    rng = RngStream(1)
    directions = sample_direction(rng, 4, 1000)
    np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)
    assert sample_direction(rng, 3).shape == (3,)


def test_chord_of_unit_ball_through_center():
    ball = make_body(BodySpec(name="ball", r=1.0), 2)
    eps0 = 1e-6
    chord = chord_bisect(ball, np.zeros(2), np.array([1.0, 0.0]), eps0=eps0)
    assert chord.lambda1 <= -1.0 and chord.lambda1 >= -1.0 - eps0
    assert chord.lambda2 >= 1.0 and chord.lambda2 <= 1.0 + eps0
    # 3 log2(2r/eps0) + 8 calls is the expected order of the cost
    assert chord.oracle_calls <= 2 * (math.log2(2.0 / (eps0 / 4.0)) + 3)


def test_thin_body_gives_degenerate_chord():
    sliver = make_body(BodySpec(name="box", half_width=1e-12), 2)
    with pytest.raises(DegenerateChord):
        chord_bisect(sliver, np.zeros(2), np.array([0.0, 1.0]), eps0=1e-3)
    with pytest.raises(DegenerateChord):
        hit_and_run_step(np.zeros((3, 2)), sliver, RngStream(2), eps0=1e-3)


def test_hit_and_run_stays_inside_and_counts_calls():
    box = make_body(BodySpec(name="box", half_width=0.5), 3)
    calls = OracleCalls()
    x = np.zeros((200, 3))
    rng = RngStream(3)
    for _ in range(5):
        x = hit_and_run_step(x, box, rng, calls=calls)
    assert np.all(np.abs(x) <= 0.5)
    assert calls.membership > 0


def test_hit_and_run_keeps_uniform_on_disc():
    cfg = KernelConfig(kind="hit_and_run", d=2, body=BodySpec(name="ball", r=1.0))
    sampler = builtin_kernel(cfg)
    rng = RngStream(10)
    x = sampler.sample_initial(InitialSpec(kind="uniform_ball", radius=1.0), 4000, rng)
    aux = sampler.init_aux(x)
    for _ in range(10):
        x, aux = sampler.step(x, aux, rng)
    radius_sq = np.sum(x * x, axis=1)
    assert stats.kstest(radius_sq, "uniform").pvalue > P_LEVEL
    angle = (np.arctan2(x[:, 1], x[:, 0]) + math.pi) / (2 * math.pi)
    assert stats.kstest(angle, "uniform").pvalue > P_LEVEL


def test_hit_and_run_mixes_from_center():
    cfg = KernelConfig(kind="hit_and_run", d=2, body=BodySpec(name="ball", r=1.0))
    sampler = builtin_kernel(cfg)
    rng = RngStream(11)
    x = sampler.sample_initial(InitialSpec(kind="point"), 4000, rng)
    for _ in range(30):
        x, _ = sampler.step(x, None, rng)
    counts, _ = np.histogram(np.sum(x * x, axis=1), bins=10, range=(0.0, 1.0))
    assert stats.chisquare(counts).pvalue > P_LEVEL


def test_ball_walk_metropolis_targets_truncated_gaussian():
    cfg = KernelConfig(kind="ball_walk_metropolis", d=1, delta=1.0,
                       body=BodySpec(name="box", half_width=3.0),
                       log_density=DensitySpec(name="gaussian", precision=1.0))
    sampler = builtin_kernel(cfg)
    rng = RngStream(12)
    calls = OracleCalls()
    x = sampler.sample_initial(InitialSpec(kind="point"), 5000, rng)
    aux = sampler.init_aux(x, calls)
    steps = 500
    for _ in range(steps):
        x, aux = sampler.step(x, aux, rng, calls)
    assert np.all(np.abs(x) <= 3.0)
    target = stats.truncnorm(-3.0, 3.0)
    assert stats.kstest(x[:, 0], target.cdf).pvalue > P_LEVEL
    assert calls.membership == steps * 5000
    assert calls.rho == steps * 5000 and calls.rho_init == 5000


def test_metropolis_step_with_uniform_density_is_ball_walk():
    ball = make_body(BodySpec(name="ball", r=1.0), 2)
    uniform = make_log_density(DensitySpec(name="uniform"), 2)
    x = np.zeros((100, 2))

    def propose(points, rng):
        return ball_walk_step(points, 0.3, ball, rng)

    y = metropolis_step(x, propose, uniform, RngStream(5))
    assert np.all(np.linalg.norm(y, axis=1) <= 0.3 + 1e-12)
    assert np.any(np.linalg.norm(y, axis=1) > 0.0)


def test_lazy_step_holds_about_half():
    rng = RngStream(6)
    x = np.zeros((10000, 1))
    y = lazy_step(lambda z: z + 1.0, x, rng)
    moved = int(np.sum(y[:, 0] == 1.0))
    assert stats.binomtest(moved, 10000, 0.5).pvalue > P_LEVEL


def test_lipschitz_spot_checks():
    rng = RngStream(7)
    points = rng.uniform((500, 2)) * 2.0 - 1.0
    gaussian = make_log_density(DensitySpec(name="gaussian", precision=2.0), 2, radius=math.sqrt(2.0))
    assert gaussian.lipschitz_L == pytest.approx(2.0 * math.sqrt(2.0))
    assert spot_check_lipschitz(gaussian, points, rng)
    laplace = make_log_density(DensitySpec(name="laplace", scale=0.5), 2)
    assert spot_check_lipschitz(laplace, points, rng)


def test_example1_kernel_preserves_its_density():
    rng = RngStream(8)
    x = example1_stationary(rng, 20000)
    y = example1_step(x, rng)
    cdf = lambda t: (t * t + 3.0 * t) / 4.0
    assert stats.kstest(x[:, 0], cdf).pvalue > P_LEVEL
    assert stats.kstest(y[:, 0], cdf).pvalue > P_LEVEL


def test_contracting_normal_preserves_standard_normal():
    sampler = builtin_kernel(KernelConfig(kind="contracting_normal", theta=0.7))
    rng = RngStream(9)
    x = sampler.sample_initial(InitialSpec(kind="stationary"), 20000, rng)
    for _ in range(5):
        x, _ = sampler.step(x, None, rng)
    assert stats.kstest(x[:, 0], "norm").pvalue > P_LEVEL


def test_independence_sampler_targets_standard_normal():
    sampler = builtin_kernel(KernelConfig(kind="independence_normal", xi=2.0))
    rng = RngStream(13)
    calls = OracleCalls()
    x = sampler.sample_initial(InitialSpec(kind="point"), 10000, rng)
    for _ in range(60):
        x, _ = sampler.step(x, None, rng, calls)
    assert stats.kstest(x[:, 0], "norm").pvalue > P_LEVEL
    assert calls.rho == 60 * 10000


def test_toy_hypercube_step_is_lazy_single_flip():
    spec = ToySpec(family="hypercube", d=6)
    x = np.zeros(20000, dtype=np.int64)
    y = toy_step(spec, x, RngStream(14))
    flips = np.array([bin(v).count("1") for v in y])
    assert set(flips) <= {0, 1}
    assert stats.binomtest(int(np.sum(flips == 0)), 20000, 0.5).pvalue > P_LEVEL


def test_l1_contraction_of_example1():
    def kernel(x, y):
        return (1.0 + x + y) / (x + 1.5)

    def rho(y):
        return (2.0 * y + 3.0) / 4.0

    alpha = l1_contraction_1d(kernel, rho)
    assert abs(alpha - 1.0 / 24.0) <= 1e-4
    assert abs(l1_contraction_1d(kernel, rho, grid_points=257) - 1.0 / 24.0) <= 1e-4


def test_l1_contraction_reports_nonconvergence():
    def spiky(x, y):
        return 1.0 + np.sin(1e4 * x) * np.ones_like(y)

    with pytest.raises(NonConvergent):
        l1_contraction_1d(spiky, lambda y: np.ones_like(y), tol=1e-12, max_doublings=2)


def test_finite_chain_sampler_from_toy():
    sampler = builtin_kernel(KernelConfig(kind="finite_chain", toy=ToySpec(family="circle", T=5)))
    assert isinstance(sampler, KernelSampler) and sampler.discrete
    rng = RngStream(15)
    x = sampler.sample_initial(InitialSpec(kind="point", state=0), 10000, rng)
    x, _ = sampler.step(x, None, rng)
    assert set(np.unique(x)) <= {1, 4}


def test_direction_signs_balance_on_the_line():
    draws = 100000
    u = sample_direction(RngStream(16), 1, draws)[:, 0]
    assert set(np.unique(u)) <= {-1.0, 1.0}
    assert stats.binomtest(int(np.sum(u > 0)), draws, 0.5).pvalue > P_LEVEL


def test_directions_fill_octants_evenly():
    u = sample_direction(RngStream(17), 3, 100000)
    octant = (u > 0).astype(int) @ np.array([1, 2, 4])
    counts = np.bincount(octant, minlength=8)
    assert stats.chisquare(counts).pvalue > P_LEVEL


def test_ball_walk_proposal_radius_follows_volume():
    d = 3
    wide = make_body(BodySpec(name="ball", r=1e6), d)
    y = ball_walk_step(np.zeros((100000, d)), 1.0, wide, RngStream(18))
    radius = np.linalg.norm(y, axis=1)
    assert np.all(radius <= 1.0)
    assert stats.kstest(radius, lambda t: np.clip(t, 0.0, 1.0) ** d).pvalue > P_LEVEL


def test_metropolis_accepts_half_at_log_ratio_minus_log2():
    trials = 100000
    halving = LogDensityOracle(eval=lambda y: -math.log(2.0) * y[:, 0], dim=1, name="halving")
    calls = OracleCalls()
    y = metropolis_step(np.zeros((trials, 1)), lambda points, rng: points + 1.0, halving, RngStream(19), calls)
    accepted = int(np.sum(y[:, 0] == 1.0))
    assert accepted + int(np.sum(y[:, 0] == 0.0)) == trials
    assert stats.binomtest(accepted, trials, 0.5).pvalue > P_LEVEL
    assert calls.rho == trials and calls.rho_init == trials


def _check_chord(body, x, direction, true_lambda1, true_lambda2, eps0):
    chord = chord_bisect(body, x, direction, eps0=eps0)
    assert true_lambda1 - eps0 <= chord.lambda1 <= true_lambda1 + 1e-12
    assert true_lambda2 - 1e-12 <= chord.lambda2 <= true_lambda2 + eps0
    assert chord.length <= 6.0 * (true_lambda2 - true_lambda1)
    assert chord.oracle_calls <= 3.0 * math.log2(2.0 * body.outer_radius / eps0) + 8.0


def test_chord_brackets_on_box():
    box = make_body(BodySpec(name="box", half_width=1.0), 2)
    x = np.array([0.2, -0.3])
    for eps0 in (1e-3, 1e-6, 1e-9):
        _check_chord(box, x, np.array([1.0, 0.0]), -1.2, 0.8, eps0)
        diagonal = np.array([1.0, 1.0]) / math.sqrt(2.0)
        _check_chord(box, x, diagonal, -0.7 * math.sqrt(2.0), 0.8 * math.sqrt(2.0), eps0)


def test_chord_brackets_on_offset_ball():
    center, r = np.array([0.5, 0.0, 0.0]), 2.0
    body = MembershipOracle(contains=lambda y: np.linalg.norm(y - center, axis=1) <= r,
                            dim=3, outer_radius=2.5, inner_radius=1.5, name="offset ball")
    x = np.array([0.3, 0.4, -0.2])
    rng = RngStream(20)
    for _ in range(25):
        u = sample_direction(rng, 3)
        b = float(np.dot(u, x - center))
        c = float(np.dot(x - center, x - center)) - r * r
        root = math.sqrt(b * b - c)
        _check_chord(body, x, u, -b - root, -b + root, 1e-6)


def test_bodies_declare_inner_radius():
    assert make_body(BodySpec(name="ball", r=2.0), 3).inner_radius == 2.0
    box = make_body(BodySpec(name="box", half_width=0.5), 4)
    assert box.inner_radius == 0.5 and box.outer_radius == pytest.approx(1.0)
    assert make_body(BodySpec(name="ball_box", r=1.0, half_width=0.7), 2).inner_radius == 0.7
    unit = lambda y: np.linalg.norm(y, axis=1) <= 1.0
    with pytest.raises(ValueError):
        MembershipOracle(contains=unit, dim=2, outer_radius=1.0, inner_radius=2.0)
    with pytest.raises(ValueError):
        MembershipOracle(contains=unit, dim=2, outer_radius=3.0, inner_radius=1.5)
    with pytest.raises(ValueError):
        MembershipOracle(contains=unit, dim=2, outer_radius=0.5, inner_radius=0.5)


if __name__ == "__main__":
    tests = [
        test_streams_are_reproducible_and_independent,
        test_directions_are_unit_vectors,
        test_chord_of_unit_ball_through_center,
        test_thin_body_gives_degenerate_chord,
        test_hit_and_run_stays_inside_and_counts_calls,
        test_hit_and_run_keeps_uniform_on_disc,
        test_hit_and_run_mixes_from_center,
        test_ball_walk_metropolis_targets_truncated_gaussian,
        test_metropolis_step_with_uniform_density_is_ball_walk,
        test_lazy_step_holds_about_half,
        test_lipschitz_spot_checks,
        test_example1_kernel_preserves_its_density,
        test_contracting_normal_preserves_standard_normal,
        test_independence_sampler_targets_standard_normal,
        test_toy_hypercube_step_is_lazy_single_flip,
        test_l1_contraction_of_example1,
        test_l1_contraction_reports_nonconvergence,
        test_finite_chain_sampler_from_toy,
        test_direction_signs_balance_on_the_line,
        test_directions_fill_octants_evenly,
        test_ball_walk_proposal_radius_follows_volume,
        test_metropolis_accepts_half_at_log_ratio_minus_log2,
        test_chord_brackets_on_box,
        test_chord_brackets_on_offset_ball,
        test_bodies_declare_inner_radius,
    ]
    for test in tests:
        print(f"🧪 {test.__name__}")
        test()
        print(f"✅ {test.__name__} passed")
    print("\n🎉 All sampler tests passed!")
