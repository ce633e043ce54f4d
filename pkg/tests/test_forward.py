import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpdm_bayes.forward import (
    EllipticForwardModel,
    ForwardError,
    HeatForwardModel,
    Observation,
    generate_observations,
    heat_forward,
    heat_propagate,
    heat_regress_coefficients,
    read_observations_csv,
    write_node_csv,
    write_observations_csv,
)
from gpdm_bayes.geometry import manufacture_rhs
from gpdm_bayes.prior import PriorSample, build_prior


@pytest.fixture(scope="module")
def prior(ellipse315):
    cloud, ghosts, eps = ellipse315
    return build_prior(cloud, 0.3, 6, 20, k_nn=2, ghosts=ghosts, epsilon=eps)


def heat(prior, t):
    return HeatForwardModel(prior, t, np.arange(prior.N))


def test_elliptic_constant(ellipse315):
    cloud, ghosts, eps = ellipse315
    m = EllipticForwardModel(cloud, ghosts, eps, np.zeros(cloud.N), np.full(2, -0.3), np.arange(cloud.N))
    np.testing.assert_allclose(m(np.zeros(cloud.N)), -0.3, atol=1e-8)


def test_elliptic_flat_oracle(flat):
    cloud, ghosts, eps = flat(200)
    x = cloud.intrinsic[:, 0]
    m = EllipticForwardModel(cloud, ghosts, eps, np.pi**2 * np.sin(np.pi * x), np.zeros(2), np.arange(200))
    u = m(np.zeros(200))
    assert np.linalg.norm(u - np.sin(np.pi * x)) / np.linalg.norm(np.sin(np.pi * x)) <= 0.05


def test_elliptic_ellipse_oracle(ellipse315):
    cloud, ghosts, eps = ellipse315
    a = cloud.intrinsic[:, 0]
    k = lambda t: 2 + np.cos(3 * t)
    m = EllipticForwardModel(cloud, ghosts, eps, manufacture_rhs(k, np.sin, cloud), np.zeros(2), np.arange(cloud.N))
    u = m(np.log(k(a)))
    assert np.linalg.norm(u - np.sin(a)) / np.linalg.norm(np.sin(a)) <= 0.05


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_elliptic_homogeneity_and_boundary(ellipse315, seed):
    cloud, ghosts, eps = ellipse315
    rng = np.random.default_rng(seed)
    f = rng.normal(size=cloud.N)
    theta = 0.5 * rng.normal(size=cloud.N)
    m0 = EllipticForwardModel(cloud, ghosts, eps, f, np.zeros(2), np.arange(cloud.N))
    u, u2 = m0(theta), m0(theta + np.log(2.0))
    assert np.max(np.abs(u2 - u / 2)) <= 1e-8 * max(1.0, np.abs(u).max())
    h = rng.normal(size=2)
    mh = EllipticForwardModel(cloud, ghosts, eps, f, h, np.arange(cloud.N))
    assert np.array_equal(mh(theta)[cloud.boundary_idx], h)


def test_elliptic_errors_carry_theta(ellipse315):
    cloud, ghosts, eps = ellipse315
    m = EllipticForwardModel(cloud, ghosts, eps, np.zeros(cloud.N), np.zeros(2), np.arange(cloud.N))
    bad = np.zeros(cloud.N)
    bad[3] = np.nan
    with pytest.raises(ForwardError) as ei:
        m(bad)
    assert ei.value.theta is not None and np.isnan(ei.value.theta[3])
    with pytest.raises(ForwardError):
        m(np.full(cloud.N, 1e4))
    with pytest.raises(ValueError):
        EllipticForwardModel(cloud, ghosts, eps, np.zeros(cloud.N), np.zeros(3), np.arange(3))


def test_heat_single_mode(prior):
    k, t = 4, 7.0
    z = np.zeros(prior.m)
    z[k] = 1.0
    u = heat_forward(heat(prior, t), PriorSample(z, np.zeros(2), prior.interior_term(z)))
    lam = prior.spectrum.eigenvalues[k]
    expect = np.exp(-lam * t) * prior.mode_scales[k] * prior.spectrum.eigenvectors[:, k]
    assert np.max(np.abs(u - expect)) <= 1e-10


def test_heat_time_zero_identity(prior, rng):
    c = rng.standard_normal(prior.n_coeffs)
    assert np.max(np.abs(heat(prior, 0.0)(c) - prior.reconstruct(c))) <= 1e-12


def test_heat_long_time_leaves_boundary_term(prior, rng):
    c = rng.standard_normal(prior.n_coeffs)
    t = 1e3 / prior.spectrum.eigenvalues[0]
    _, mu = prior.split(c)
    assert np.max(np.abs(heat(prior, t)(c) - prior.boundary_term(mu))) <= 1e-8


def test_heat_semigroup(prior, rng):
    c = rng.standard_normal(prior.n_coeffs)
    s, r = 2.5, 4.0
    _, mu = prior.split(c)
    b = prior.boundary_term(mu)
    phi = prior.spectrum.eigenvectors[:, : prior.m]
    us = heat(prior, s)(c)
    again = heat_propagate(phi, heat(prior, r).decay(), us - b) + b
    assert np.max(np.abs(again - heat(prior, s + r)(c))) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-5, 5))
def test_heat_linear(prior, seed, a):
    x, y = np.random.default_rng(seed).standard_normal((2, prior.n_coeffs))
    H = heat(prior, 5.0)
    lhs = H(a * x + y)
    assert np.max(np.abs(lhs - (a * H(x) + H(y)))) <= 1e-12 * max(1.0, np.abs(lhs).max())


def test_heat_dimension_mismatch(prior):
    with pytest.raises(ForwardError):
        heat_forward(heat(prior, 1.0), PriorSample(np.zeros(3), np.zeros(2), np.zeros(prior.N)))
    with pytest.raises(ValueError):
        HeatForwardModel(prior, -1.0, np.arange(3))


def test_regress_basis_members(prior):
    zeta, mu = heat_regress_coefficients(prior.basis.lifts[:, 0], prior)
    assert mu[0] == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(np.r_[zeta * prior.mode_scales, mu[1:]])) <= 1e-8
    zeta, mu = heat_regress_coefficients(prior.spectrum.eigenvectors[:, 2], prior)
    a = zeta * prior.mode_scales
    assert a[2] == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(np.r_[np.delete(a, 2), mu])) <= 1e-8


def test_regress_reference_initial_heat(prior, ellipse315):
    u0 = 10 * np.sin(ellipse315[0].intrinsic[:, 0]) + 2
    zeta, mu = heat_regress_coefficients(u0, prior)
    fit = prior.reconstruct(np.r_[zeta, mu])
    assert np.linalg.norm(u0 - fit) / np.linalg.norm(u0) <= 0.05


def test_regress_rank_deficiency_named(prior):
    import dataclasses

    from gpdm_bayes.prior import BoundaryBasis

    lifts = np.column_stack([prior.basis.lifts, prior.basis.lifts[:, 0]])
    basis = BoundaryBasis(lifts, ("B1", "B2", "B1"))
    bad = dataclasses.replace(prior, basis=basis)
    with pytest.raises(ForwardError, match="psi_1.*psi_3"):
        heat_regress_coefficients(np.ones(prior.N), bad)


def test_observations(rng):
    u = np.linspace(0, 1, 50)
    o = generate_observations(u, np.arange(0, 50, 5), 0.01, rng, noise_free=True)
    np.testing.assert_array_equal(o.y, u[::5])
    assert o.M == 10
    draws = np.array([generate_observations(u, np.arange(50), 0.01, rng).y - u for _ in range(200)])
    assert abs(draws.var() / 0.01 - 1) <= 0.1
    with pytest.raises(ValueError):
        generate_observations(u, np.arange(3), 0.0, rng)
    with pytest.raises(ValueError):
        Observation(np.zeros(2), 0.01, np.arange(3))


def test_observation_and_node_csv(tmp_path, rng):
    o = generate_observations(np.arange(5.0), np.array([0, 2, 4]), 0.01, rng)
    write_observations_csv(o, tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "obs_idx,y"
    back = read_observations_csv(tmp_path / "o.csv", 0.01)
    np.testing.assert_array_equal(back.y, o.y)
    np.testing.assert_array_equal(back.obs_idx, o.obs_idx)
    write_node_csv(np.arange(3.0), tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text().splitlines() == ["idx,u", "0,0.0", "1,1.0", "2,2.0"]
