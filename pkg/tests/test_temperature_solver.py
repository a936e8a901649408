from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbouss.boundary_noise import BoundaryBasis, BoundaryNoiseSpec
from stochbouss.spectral_core import (
    FREESLIP, BoxDomain, ExponentPack, ProductGrid, SpectralField, Trajectory, heat_semigroup,
    inverse_sine_transform, sine_transform,
)
from stochbouss.stochastic_convolution import simulate_Z
from stochbouss.temperature_solver import (
    TEMPERATURE_HEADER, ColumnCoupling, PicardConfig, PicardError, Transport3D, assemble_theta,
    compute_chi, interpolation_norm_u, picard_residual, picard_solve_zeta, temperature_rows,
    transport_term, ws_sup_norm,
)
from stochbouss.velocity_solver import random_solenoidal

EX = ExponentPack()
NU, NT = 8, 32
DU, DZ = BoxDomain(3, NU), BoxDomain(1, NT)
T, DT = 0.25, 1 / 128
TIMES = DT * np.arange(int(round(T / DT)) + 1)


def velocity(rng, amp=1.0, decay=0.5):
    a = random_solenoidal(DU, rng, decay)
    prof = np.cos(rng.uniform(0, 10) * TIMES + rng.uniform(0, 6))
    return Trajectory(TIMES, amp * prof[:, None, None, None, None] * a, DU, FREESLIP)


def noise(rng, eps=1.0):
    spec = BoundaryNoiseSpec(BoundaryBasis(1), eps=eps, exponents=EX)
    ens = simulate_Z(spec, DZ, T, DT, rng, record=True)
    return Trajectory(TIMES, ens.coeffs[0], DZ)


def theta_mode(amp=0.1, k=1):
    return SpectralField(DZ, amp * np.eye(NT)[k - 1])


# ---------------------------------------------------------------- transport

def test_transport_zero_cases():
    rng = np.random.default_rng(0)
    u = random_solenoidal(BoxDomain(3, 6), rng)
    g = rng.standard_normal((6, 6, 6))
    tr = Transport3D(6, 6)
    assert not np.any(tr(np.zeros_like(u), g))
    assert not np.any(tr(u, np.zeros_like(g)))


def test_transport3d_skew_symmetry():
    rng = np.random.default_rng(1)
    u = SpectralField(BoxDomain(3, 6), random_solenoidal(BoxDomain(3, 6), rng), FREESLIP, True)
    g = SpectralField(BoxDomain(3, 8), rng.standard_normal((8, 8, 8)))
    b = transport_term(u, g).coeffs
    assert abs(np.sum(b * g.coeffs)) <= 1e-8 * u.l2_norm() * g.l2_norm() ** 2


def test_transport3d_against_fine_grid_product():
    # direct oracle: evaluate u . grad g on a 4x finer grid and project back
    rng = np.random.default_rng(2)
    nu, ng = 4, 5
    u = random_solenoidal(BoxDomain(3, nu), rng, 0.3)
    g = rng.standard_normal((ng, ng, ng))
    fast = Transport3D(nu, ng)(u, g)
    slow = Transport3D(nu, ng)
    slow.grid = ProductGrid(ng, 4 * (nu + ng))
    assert np.max(np.abs(fast - slow(u, g))) < 1e-12 * np.max(np.abs(fast))


def test_transport_term_checks_inputs():
    dom = BoxDomain(3, 4)
    u = SpectralField(dom, random_solenoidal(dom, np.random.default_rng(3)), FREESLIP)
    g = SpectralField(dom, np.ones((4, 4, 4)))
    with pytest.raises(ValueError):
        transport_term(u, g)  # divergence-free flag not set
    with pytest.raises(ValueError):
        transport_term(SpectralField(dom, u.coeffs, FREESLIP, True), SpectralField(BoxDomain(1, 4), np.ones(4)))


def test_column_coupling_skew_and_quadrature():
    cc = ColumnCoupling(NU, NT)
    rng = np.random.default_rng(4)
    u = random_solenoidal(DU, rng)
    g = rng.standard_normal(NT)
    b = cc(u, g)
    assert abs(b @ g) < 1e-12 * np.sum(np.abs(u)) * (g @ g)
    # brute-force oracle: 3D quadrature of psi u . grad(psi g) on a fine midpoint grid
    m = 48  # midpoint rule is exact below frequency 2m; the z-integrand reaches NU + 2 NT
    x = (np.arange(m) + 0.5) * math.pi / m
    s2 = math.sqrt(2 / math.pi)
    k = np.arange(NU)
    ck = np.where(k == 0, 1 / math.sqrt(math.pi), s2)[:, None] * np.cos(np.outer(k, x))
    sk = s2 * np.sin(np.outer(k, x))
    l = np.arange(1, NT + 1)
    sl, cl = s2 * np.sin(np.outer(l, x)), s2 * np.cos(np.outer(l, x))
    u1 = np.einsum("abc,ai,bj,ck->ijk", u[0], sk, ck, ck, optimize=True)
    u2 = np.einsum("abc,ai,bj,ck->ijk", u[1], ck, sk, ck, optimize=True)
    u3 = np.einsum("abc,ai,bj,ck->ijk", u[2], ck, ck, sk, optimize=True)
    psi = (2 / math.pi) * np.outer(np.cos(x), np.cos(x))
    psix = -(2 / math.pi) * np.outer(np.sin(x), np.cos(x))
    psiy = -(2 / math.pi) * np.outer(np.cos(x), np.sin(x))
    gz, dgz = g @ sl, (g * l) @ cl
    integrand = psi[:, :, None] * (u1 * psix[:, :, None] * gz + u2 * psiy[:, :, None] * gz
                                   + u3 * psi[:, :, None] * dgz)
    h = math.pi / m
    ref = h**3 * np.einsum("ijk,lk->l", integrand, sl)
    assert np.max(np.abs(b - ref)) < 1e-10 * np.max(np.abs(ref))


def test_column_buoyancy_layout():
    cc = ColumnCoupling(NU, NT)
    th = np.arange(1.0, NT + 1)
    f = cc.buoyancy(th)
    assert f[2, 1, 1, 1] == -1.0 and f[2, 1, 1, NU - 1] == -(NU - 1)
    assert np.count_nonzero(f) == NU - 1


# ---------------------------------------------------------------- chi

def test_chi_zero_cases():
    rng = np.random.default_rng(5)
    cc = ColumnCoupling(NU, NT)
    u, Z = velocity(rng), noise(rng)
    assert not np.any(compute_chi(u.with_coeffs(0 * u.coeffs), Z, cc).coeffs)
    assert not np.any(compute_chi(u, Z.with_coeffs(0 * Z.coeffs), cc).coeffs)
    with pytest.raises(ValueError):
        compute_chi(u.truncate(4), Z, cc)


def _chi_ratio(rng, cc):
    u, Z = velocity(rng, decay=rng.uniform(0.2, 1.0)), noise(rng)
    chi = compute_chi(u, Z, cc)
    num = ws_sup_norm(chi.coeffs[:, 0], DZ, EX.s)
    return num / (Z.sup_norm(-2 * EX.alpha) * interpolation_norm_u(u, EX.lam, EX.delta, EX.p))


def test_chi_norm_bound_with_frozen_constant():
    cc = ColumnCoupling(NU, NT)
    fit_rng, test_rng = np.random.default_rng(6), np.random.default_rng(7)
    c_hat = 2.0 * max(_chi_ratio(fit_rng, cc) for _ in range(50))
    ratios = [_chi_ratio(test_rng, cc) for _ in range(50)]
    assert np.all(np.isfinite(ratios)) and max(ratios) <= c_hat


# ---------------------------------------------------------------- Picard

def test_picard_without_velocity_is_heat_flow():
    rng = np.random.default_rng(8)
    u = velocity(rng, amp=0.0)
    Z = noise(rng)
    th0 = SpectralField(DZ, rng.standard_normal(NT) * 0.1)
    sol = picard_solve_zeta(u, Z, th0, PicardConfig(EX), ColumnCoupling(NU, NT))
    assert sol.iterations == [1]
    for i in (0, 5, len(TIMES) - 1):
        ref = heat_semigroup(th0, TIMES[i]).coeffs[0]
        assert np.max(np.abs(sol.zeta.coeffs[i, 0] - ref)) < 1e-14


def test_picard_zero_data_gives_zero():
    rng = np.random.default_rng(9)
    u = velocity(rng)
    Z = noise(rng)
    sol = picard_solve_zeta(u, Z.with_coeffs(0 * Z.coeffs), SpectralField.zeros(DZ),
                            PicardConfig(EX), ColumnCoupling(NU, NT))
    assert not np.any(sol.zeta.coeffs)


def test_picard_residual_and_certificate():
    rng = np.random.default_rng(10)
    u, Z = velocity(rng, amp=0.5), noise(rng, eps=0.01)
    cfg = PicardConfig(EX, tol=1e-10)
    cc = ColumnCoupling(NU, NT)
    sol = picard_solve_zeta(u, Z, theta_mode(), cfg, cc)
    assert all(f < 0.9 for f in sol.factors)
    assert picard_residual(sol.zeta, u, Z, theta_mode(), cc, EX.s) <= cfg.tol
    assert sol.residual <= cfg.tol


def test_contraction_factor_linear_in_velocity():
    rng = np.random.default_rng(11)
    u, Z = velocity(rng, amp=0.4), noise(rng, eps=0.01)
    cc = ColumnCoupling(NU, NT)
    factors = {}
    for c in (0.25, 0.5, 1.0):
        uc = u.with_coeffs(c * u.coeffs)
        sol = picard_solve_zeta(uc, Z, theta_mode(), PicardConfig(EX), cc, rng=np.random.default_rng(0))
        factors[c] = sol.factors[0] / interpolation_norm_u(uc, EX.lam, EX.delta, EX.p)
    assert factors[0.25] == pytest.approx(factors[1.0], rel=1e-10)
    assert factors[0.5] == pytest.approx(factors[1.0], rel=1e-10)


def test_picard_halves_block_for_strong_velocity():
    rng = np.random.default_rng(12)
    u, Z = velocity(rng, amp=2000.0), noise(rng, eps=0.01)
    cc = ColumnCoupling(NU, NT)
    sol = picard_solve_zeta(u, Z, theta_mode(), PicardConfig(EX, max_iter=200), cc)
    assert sol.block_steps < len(TIMES) - 1 and all(f < 0.9 for f in sol.factors)
    assert sol.residual <= 1e-9


def test_picard_reports_exhausted_iterations():
    rng = np.random.default_rng(12)
    u, Z = velocity(rng, amp=1.0), noise(rng, eps=0.01)
    with pytest.raises(PicardError) as err:
        picard_solve_zeta(u, Z, theta_mode(), PicardConfig(EX, max_iter=1), ColumnCoupling(NU, NT))
    assert 0 <= err.value.factor < 0.9


def test_maximum_principle_proxy():
    rng = np.random.default_rng(13)
    x = DZ.grid()
    th0 = sine_transform(x * (math.pi - x), DZ)
    u = velocity(rng, amp=0.0)
    sol = picard_solve_zeta(u, noise(rng).with_coeffs(np.zeros((len(TIMES), 1, NT))), th0,
                            PicardConfig(EX), ColumnCoupling(NU, NT))
    vals = np.stack([inverse_sine_transform(sol.zeta.at(i)) for i in range(len(TIMES))])
    assert vals.min() >= -1e-8 * th0.l2_norm()


def test_grid_refinement_stability():
    rng = np.random.default_rng(14)
    u = velocity(rng, amp=0.5)
    norms = []
    for n in (32, 64):
        dz = BoxDomain(1, n)
        Z = Trajectory.zeros(TIMES, dz)
        th0 = SpectralField(dz, 0.1 * np.eye(n)[0] + 0.05 * np.eye(n)[2])
        sol = picard_solve_zeta(u, Z, th0, PicardConfig(EX), ColumnCoupling(NU, n))
        norms.append(ws_sup_norm(sol.zeta.coeffs[:, 0], dz, EX.s))
    assert abs(norms[1] / norms[0] - 1) < 0.02


# ---------------------------------------------------------------- assembly

def test_assemble_theta_examples():
    rng = np.random.default_rng(15)
    Z = noise(rng)
    zeta = Z.with_coeffs(rng.standard_normal(Z.coeffs.shape))
    zero = Z.with_coeffs(np.zeros_like(Z.coeffs))
    assert np.array_equal(assemble_theta(zeta, zero).coeffs, zeta.coeffs)
    assert np.array_equal(assemble_theta(zero, Z).coeffs, Z.coeffs)
    with pytest.raises(ValueError):
        assemble_theta(zeta.truncate(3), Z)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_assemble_theta_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a = Trajectory(TIMES[:5], rng.standard_normal((5, NT)), DZ)
    b = Trajectory(TIMES[:5], rng.standard_normal((5, NT)) * rng.uniform(0, 3), DZ)
    theta = assemble_theta(a, b, alpha=EX.alpha)
    assert theta.sup_norm(-2 * EX.alpha) <= a.sup_norm(-2 * EX.alpha) + b.sup_norm(-2 * EX.alpha) + 1e-12


# ------------------------------------------------------------ interpolation

def test_interpolation_single_mode_identity():
    dom = BoxDomain(3, 4)
    c = np.zeros((3, 3, 4, 4, 4))
    c[:, 0, 1, 1, 0] = 1.0
    u = Trajectory(TIMES[:3], c, dom, FREESLIP)
    mu = 2.0
    lam, delta, p = 0.5, 0.05, 4.0
    # on one mode the interpolated norm is exactly mu^((1/2 + lam)/2)
    expected = mu ** ((0.5 + lam) / 2) * TIMES[2] ** ((lam + delta) / p)
    assert interpolation_norm_u(u, lam, delta, p) == pytest.approx(expected, rel=1e-12)


def test_interpolation_two_mode_strict():
    dom = BoxDomain(3, 4)
    c = np.zeros((3, 3, 4, 4, 4))
    c[:, 0, 1, 1, 0] = 1.0
    c[:, 1, 3, 2, 0] = 0.7
    mu = dom.eigenvalues(FREESLIP)
    lam, delta = 0.5, 0.05
    dprime = 1 - lam
    mid = np.sqrt(np.sum(mu ** (1.5 - dprime) * c[0] ** 2))
    lo = np.sqrt(np.sum(mu ** (0.5 - delta) * c[0] ** 2))
    hi = np.sqrt(np.sum(mu ** (1.5 - delta) * c[0] ** 2))
    assert mid < lo ** (dprime - delta) * hi ** (1 - dprime + delta) * (1 - 1e-12)
    u = Trajectory(TIMES[:3], c, dom, FREESLIP)
    assert interpolation_norm_u(u, lam, delta, 4.0) > 0


def test_interpolation_zero_and_range():
    u = Trajectory.zeros(TIMES[:4], BoxDomain(3, 4), 3, FREESLIP)
    assert interpolation_norm_u(u, 0.5, 0.05, 4.0) == 0.0
    for lam in (0.0, 0.95, 1.2):
        with pytest.raises(ValueError):
            interpolation_norm_u(u, lam, 0.05, 4.0)


def test_picard_config_validation():
    with pytest.raises(ValueError):
        PicardConfig(EX, tol=0.0)
    with pytest.raises(ValueError):
        PicardConfig(EX, T1=-1.0)


def test_temperature_rows_schema():
    rng = np.random.default_rng(16)
    u, Z = velocity(rng, 0.3), noise(rng, 0.01)
    sol = picard_solve_zeta(u, Z, theta_mode(), PicardConfig(EX), ColumnCoupling(NU, NT))
    rows = list(temperature_rows(sol, assemble_theta(sol.zeta, Z), EX.s, EX.alpha))
    assert TEMPERATURE_HEADER == ("t", "norm_zeta_Ws65", "norm_theta_Hm2a", "picard_iters",
                                  "contraction_factor")
    assert len(rows) == len(TIMES) and rows[1][3] >= 1
