import math

import numpy as np
import pytest
from scipy import stats

from fracheat.besov import tail_seminorm
from fracheat.forcing import (
    KINDS,
    ForcingSpec,
    dilate_homogeneous,
    make_delta,
    make_delta_derivative,
    make_forcing,
    make_homogeneous,
    make_indicator,
    make_random_bandlimited,
)
from fracheat.lorentz import NormSpec, lorentz_norm, uniformly_local_lorentz_norm
from fracheat.spectral import Grid, PhysicalField

G = Grid(1, 16.0, 1024)


def test_delta_coefficients():
    d = make_delta(G, 2.5)
    np.testing.assert_array_equal(d.coeffs, 2.5 / 32.0)
    g2 = Grid(2, 4.0, 32)
    assert make_delta(g2).coeffs[0, 0] == 1 / 64.0


def test_delta_derivative_pairing():
    d = make_delta_derivative(G)
    assert d.coeffs[0] == 0
    assert np.all(d.coeffs.real == 0)
    x = G.x1d
    psi = np.exp(-((x - 0.3) ** 2))
    pairing = np.sum(d.to_physical().samples * psi) * G.spacing
    dpsi0 = 2 * 0.3 * math.exp(-0.09)  # psi'(0)
    assert pairing == pytest.approx(-dpsi0, rel=1e-8)
    with pytest.raises(ValueError):
        make_delta_derivative(G, axis=2)


def test_delta_derivative_second_axis():
    g = Grid(2, 4.0, 32)
    d = make_delta_derivative(g, axis=2).to_physical().samples
    assert np.allclose(d, -d[:, ::-1][:, np.r_[-1, 0:31]])


def test_homogeneous_basic():
    assert np.all(make_homogeneous(G, 0.5, 0.0).coeffs == 0)
    with pytest.raises(ValueError):
        make_homogeneous(G, 0.5, 1.0, centers=[(0.0,), (1.5,)])
    with pytest.raises(ValueError):
        make_homogeneous(G, 0.5, 1.0, cutoff=G.spacing / 4)


def test_homogeneous_weak_norm_converges():
    # |x|^{-1/p} on the unit ball: alpha(s) = 2 s^{-p} for s > 1, weak norm 2^{1/p}
    p = 2.0
    errs = []
    for M in (1024, 4096, 16384):
        g = Grid(1, 16.0, M)
        f = make_homogeneous(g, 1 / p, 1.0, cutoff=0.05).to_physical()
        errs.append(abs(uniformly_local_lorentz_norm(f, NormSpec(p)) / 2 ** (1 / p) - 1))
    assert errs[-1] < 0.01
    assert errs[-1] < errs[0]


def test_multi_bump_no_accumulation():
    spec = NormSpec(2.0)
    one = make_homogeneous(G, 0.5, 1.0, cutoff=0.05).to_physical()
    three = make_homogeneous(G, 0.5, 1.0, centers=[(0.0,), (4.0,), (-7.0,)], cutoff=0.05).to_physical()
    a = uniformly_local_lorentz_norm(one, spec)
    assert uniformly_local_lorentz_norm(three, spec) == pytest.approx(a, rel=1e-3)
    assert lorentz_norm(three, spec) > 1.5 * a


def test_indicator():
    f = make_indicator(G, radius=2.0, height=3.0).to_physical().samples
    assert np.sum(f > 1.5) * G.spacing == pytest.approx(4.0, abs=2 * G.spacing)


def test_random_bandlimited_contract():
    a = make_random_bandlimited(G, 5, -0.5, (1.0, 20.0))
    b = make_random_bandlimited(G, 5, -0.5, (1.0, 20.0))
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    assert np.all(make_random_bandlimited(G, 5, 0.0, (3.0, 2.0)).coeffs == 0)
    fine = make_random_bandlimited(Grid(1, 16.0, 4096), 5, -0.5, (1.0, 20.0))
    np.testing.assert_allclose(fine.to_physical().samples[::4], a.to_physical().samples, atol=1e-12)
    with pytest.raises(ValueError):
        make_random_bandlimited(G, 5, 0.0, (1.0, 150.0))


def test_random_bandlimited_is_gaussian():
    k = [stats.kurtosis(make_random_bandlimited(G, s, 0.0, (0.5, 60.0)).to_physical().samples, fisher=False)
         for s in range(20)]
    assert abs(np.mean(k) - 3.0) <= 0.5


def test_dilation_tail_nonincreasing():
    gamma, theta = 2.0, 2.0
    w = gamma * theta / (gamma - 1)
    tails = [tail_seminorm(dilate_homogeneous(G, 0.5, 1.0, lam, w, cutoff=0.05), 0.5, theta, 2.0, 2)
             for lam in (1.0, 0.5, 0.25)]
    assert tails[0] >= tails[1] >= tails[2]
    with pytest.raises(ValueError):
        dilate_homogeneous(G, 0.5, 1.0, 1 / 32, w)


def test_spec_validation():
    with pytest.raises(ValueError):
        ForcingSpec("gaussian")
    with pytest.raises(ValueError):
        ForcingSpec("homogeneous", exponent=1.2).check_exponent(1)
    ForcingSpec("homogeneous", exponent=1.2, measure_like=True).check_exponent(1)


@pytest.mark.parametrize("kind", KINDS)
def test_make_forcing_every_kind(kind):
    f = make_forcing(G, ForcingSpec(kind, cutoff=0.05))
    PhysicalField(G, f.to_physical().samples)  # Hermitian: inverse check passes
    assert f.coeffs.shape == G.shape
