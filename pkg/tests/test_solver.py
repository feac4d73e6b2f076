import json
import math

import numpy as np
import pytest
from scipy import sparse
from scipy.integrate import solve_ivp

from fracheat.forcing import make_delta, make_random_bandlimited
from fracheat.spectral import Grid, ModelParams, SpectralField, duhamel_linear_multiplier, semigroup_apply
from fracheat.solver import (
    SolverConfig,
    SpaceTimeField,
    admissibility,
    difference_bound_ratio,
    initial_data_evolve,
    linear_part_I,
    nonlinear_part_J,
    picard_solve,
    power_nonlinearity,
    residual,
    slice_norms,
    weak_star_initial_decay,
    xt_norm,
)

G = Grid(1, 16.0, 1024)
M22 = ModelParams(2.0, 2.0, 1)


def cfg(**kw):
    base = dict(model=M22, p=3.0, T=0.5, n_time=64, max_iters=60)
    base.update(kw)
    return SolverConfig(**base)


def mode(grid, k, amp=1.0):
    c = np.zeros(grid.shape, dtype=complex)
    c[k] = c[-k] = 0.5 * amp
    return SpectralField(grid, c)


def constant_in_time(f, config):
    return SpaceTimeField(f.grid, config.times, np.broadcast_to(f.coeffs, (config.n_time + 1,) + f.grid.shape).copy())


def test_config_hypotheses():
    with pytest.raises(ValueError):
        cfg(p=2.0)
    with pytest.raises(ValueError):
        cfg(T=2.0)
    with pytest.raises(ValueError):
        SolverConfig(ModelParams(0.5, 3.0, 2), p=3.5)  # p < N(gamma-1)/theta
    with pytest.raises(ValueError):
        cfg(mode="other")
    assert cfg(p=1.5, T=2.0, override=True).T == 2.0
    assert cfg().times[-1] == 0.5


def test_linear_part_single_mode_and_mean():
    c = cfg()
    k = 7
    u = linear_part_I(mode(G, k), c)
    a = (k * math.pi / 16) ** 2
    np.testing.assert_allclose(u.coeffs[:, k].real, 0.5 * (1 - np.exp(-c.times * a)) / a, rtol=0, atol=1e-15)
    mean = linear_part_I(make_delta(G), c).coeffs[:, 0].real
    np.testing.assert_allclose(mean, c.times / 32.0, rtol=1e-15)
    assert np.all(linear_part_I(SpectralField.zeros(G), c).coeffs == 0)
    assert np.all(u.coeffs[0] == 0)


def test_power_nonlinearity():
    u = np.array([-2.0, -0.5, 0.0, 3.0])
    np.testing.assert_array_equal(power_nonlinearity(u, 3.0), u**3)
    np.testing.assert_allclose(power_nonlinearity(u, 1.5), np.sign(u) * np.abs(u) ** 1.5)
    np.testing.assert_array_equal(power_nonlinearity(u, 2.0), u * np.abs(u))


def test_cubing_three_mode_image():
    # cos^3 = (3 cos + cos 3x) / 4
    c = cfg(model=ModelParams(2.0, 3.0, 1), p=4.0, n_time=4)
    k = 10
    u = constant_in_time(mode(G, k), c)
    J = nonlinear_part_J(u, c)
    d = duhamel_linear_multiplier(G, c.dt, 2.0)
    expect = np.zeros(G.shape, dtype=complex)
    expect[[k, -k]] = 3 / 8
    expect[[3 * k, -3 * k]] = 1 / 8
    np.testing.assert_allclose(J.coeffs[1], d * expect, atol=1e-10)
    assert np.all(J.coeffs[0] == 0)


def test_zero_input_zero_output():
    c = cfg()
    z = SpaceTimeField(G, c.times, np.zeros((c.n_time + 1,) + G.shape, dtype=complex))
    assert np.all(nonlinear_part_J(z, c).coeffs == 0)
    u, rep = picard_solve(SpectralField.zeros(G), c)
    assert rep.converged and rep.final_residual == 0.0
    assert np.all(u.coeffs == 0)


def _smooth_J(n_time):
    c = cfg(n_time=n_time, T=0.5)
    base = make_random_bandlimited(G, 1, 0.0, (0.2, 2.0), amplitude=3.0).coeffs
    coeffs = np.stack([(1 + 4 * t) * base for t in c.times])
    return nonlinear_part_J(SpaceTimeField(G, c.times, coeffs), c).coeffs[-1]


def test_left_rule_first_order():
    ref = _smooth_J(4096)
    ns = np.array([16, 32, 64, 128])
    err = [np.max(np.abs(_smooth_J(n) - ref)) for n in ns]
    slope = -np.polyfit(np.log(ns), np.log(err), 1)[0]
    assert abs(slope - 1.0) <= 0.2


def test_mode_separation_without_nonlinearity():
    mu = make_random_bandlimited(G, 2, -1.0, (0.5, 30.0))
    c = cfg(nonlinear=False)
    u, rep = picard_solve(mu, c)
    assert rep.converged
    np.testing.assert_array_equal(u.coeffs, linear_part_I(mu, c).coeffs)
    ci = cfg(nonlinear=False, mode="initial_data")
    v, _ = initial_data_evolve(mu, ci)
    for n in (0, 7, 64):
        assert np.max(np.abs(v.coeffs[n] - semigroup_apply(mu, ci.times[n], 2.0).coeffs)) <= 1e-12
    with pytest.raises(ValueError):
        initial_data_evolve(mu, c)
    with pytest.raises(ValueError):
        picard_solve(mu, ci)


def test_small_delta_converges_with_small_ratios():
    c = cfg(n_time=128, tol=1e-10, M_ball=1.0)
    u, rep = picard_solve(make_delta(G, 1e-2), c)
    assert rep.converged and rep.verdict == "converged"
    assert rep.final_residual <= c.tol
    assert all(r < 1 for r in rep.contraction_ratios)
    assert rep.within_ball
    assert residual(u, make_delta(G, 1e-2), c) == rep.final_residual
    doc = json.loads(rep.to_json(c))
    assert doc["config"]["p"] == 3.0 and doc["converged"]


def test_contraction_ratio_nondecreasing_in_amplitude():
    c = cfg(n_time=64)
    first = []
    for m in (0.01, 0.1, 1.0, 3.0, 6.0):
        _, rep = picard_solve(make_delta(G, m), c)
        assert rep.converged
        first.append(rep.contraction_ratios[0])
    assert all(a <= b for a, b in zip(first, first[1:]))


def test_residual_of_linear_part_and_sensitivity():
    mu = make_delta(G, 1.0)
    c = cfg()
    lin = linear_part_I(mu, c)
    assert residual(lin, mu, c) == pytest.approx(xt_norm(nonlinear_part_J(lin, c), 3.0), rel=1e-12)
    u, rep = picard_solve(mu, c)
    deltas = []
    for eps in (1e-4, 2e-4, 4e-4):
        pert = u.with_slice(c.n_time, u.coeffs[-1] + eps * mode(G, 3).coeffs)
        deltas.append(residual(pert, mu, c) - rep.final_residual)
    ratios = np.array(deltas[1:]) / np.array(deltas[:-1])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.05)


def test_xt_norm_cases():
    c = cfg(n_time=8)
    f = mode(G, 5)
    const = constant_in_time(f, c)
    assert xt_norm(const, 3.0) == pytest.approx(slice_norms(const, 3.0)[1], rel=1e-14)
    decaying = SpaceTimeField(G, c.times, np.stack([np.exp(-t) * f.coeffs for t in c.times]))
    sn = slice_norms(decaying, 3.0)
    assert xt_norm(decaying, 3.0) == sn[1]
    assert xt_norm(SpaceTimeField(G, c.times, 0 * const.coeffs), 3.0) == 0


def _fd_solution(mass, L=16.0, M=1024, T=0.5):
    # method of lines with second differences, independent of the spectral code
    h = 2 * L / M
    e = np.ones(M)
    A = sparse.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    A[0, -1] = A[-1, 0] = 1
    A = (A / h**2).tocsr()
    f = np.zeros(M)
    f[M // 2] = mass / h
    sol = solve_ivp(lambda t, u: A @ u + u * np.abs(u) + f, (0, T), np.zeros(M), method="BDF",
                    jac=lambda t, u: A + sparse.diags(2 * np.abs(u)), rtol=1e-9, atol=1e-11)
    return sol.y[:, -1], sol.status


def test_mass_ten_matches_time_marcher():
    c = cfg(n_time=256)
    u, rep = picard_solve(make_delta(G, 10.0), c)
    assert rep.converged
    us = u.slice(c.n_time).to_physical().samples
    uf, status = _fd_solution(10.0)
    assert status == 0
    far = np.abs(G.x1d) > 1
    assert np.max(np.abs(us - uf)[far]) <= 5e-3 * np.max(uf)
    assert us[512] == pytest.approx(uf[512], rel=0.03)


def test_mass_hundred_diverges():
    u, rep = picard_solve(make_delta(G, 100.0), cfg(n_time=256))
    assert rep.verdict == "diverged" and not rep.converged
    assert rep.iterate_xt_norms[-1] > rep.iterate_xt_norms[0]
    _, status = _fd_solution(100.0)
    assert status == -1  # the time marcher blows up as well


def test_admissibility_report():
    rep = admissibility(make_delta(G, 1e-2), cfg(), eps=0.5, s=-1.0)
    assert rep["clause1"]["finite"] and rep["clause2"]["finite"] and rep["clause3"]["finite"]
    assert rep["clause2"]["p_eff"] == pytest.approx(3 / 2.5)
    bad = admissibility(make_delta(G), cfg(), eps=3.0, s=0.5)
    assert not bad["clause2"]["finite"] and not bad["clause3"]["finite"]


def test_weak_star_trivial_and_linear():
    c = cfg(n_time=128)
    z = SpaceTimeField(G, c.times, np.zeros((129,) + G.shape, dtype=complex))
    assert weak_star_initial_decay(z, c, -0.5).trivial
    mu = make_random_bandlimited(G, 4, 0.0, (0.2, 3.0))
    fit = weak_star_initial_decay(linear_part_I(mu, c), c, -0.5)
    assert abs(fit.exponent - 1.0) <= 0.05 and fit.vanishing
    with pytest.raises(ValueError):
        weak_star_initial_decay(z, cfg(n_time=8), -0.5)


@pytest.mark.parametrize("gamma", [1.5, 2.0, 3.0])
def test_difference_bound(gamma):
    rng = np.random.default_rng(int(gamma * 10))
    worst = 0.0
    for _ in range(20):
        f = make_random_bandlimited(G, int(rng.integers(1 << 30)), 0.0, (0.2, 20.0), 10 ** rng.uniform(-1, 1))
        g = make_random_bandlimited(G, int(rng.integers(1 << 30)), 0.0, (0.2, 20.0), 10 ** rng.uniform(-1, 1))
        worst = max(worst, difference_bound_ratio(f.to_physical().samples, g.to_physical().samples, G, gamma,
                                                  gamma + 1.0))
    assert worst <= 1.05
    f = np.ones(G.shape)
    assert difference_bound_ratio(f, f, G, gamma, gamma + 1) == 0.0
    with pytest.raises(ValueError):
        difference_bound_ratio(f, f, G, gamma, gamma)
