"""Remainder temperature zeta = theta - Z by a chained Picard iteration.

On a time block [t_a, t_b] the map is

    Psi(zeta)_t = e^{(t - t_a) Delta} zeta_a - int e^{(t-s) Delta} (u . grad zeta_s) ds
                  - int e^{(t-s) Delta} (u . grad Z_s) ds,

with both convolutions discretized by exponential-integrator weights
(exact for integrands frozen at the left end of each step).  The block
length starts at T and is halved until the Lipschitz factor of Psi, measured
on random directions, drops below 0.9.

Two transports are provided.  ``Transport3D`` handles a genuine 3D sine
scalar.  ``ColumnCoupling`` is the reduced model used by the standard
scenario: the temperature is a profile theta(z) on (0, pi) lifted to 3D as
psi(x, y) theta(z) with psi = (2/pi) cos x cos y, and the transport is the
Galerkin projection of u . grad(psi theta) back onto psi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_core import (FREESLIP, FREESLIP_KINDS, SINE, BoxDomain, ExponentPack, ProductGrid,
                            SpectralField, Trajectory, differentiate_axis, phi1,
                            sobolev_norms, sobolev_norms_q, time_lp_norm)

log = logging.getLogger(__name__)


class PicardError(RuntimeError):
    """The remainder fixed point failed to contract; ``factor`` is the last measured factor."""

    def __init__(self, message, factor):
        super().__init__(message)
        self.factor = factor


@dataclass(frozen=True)
class PicardConfig:
    exponents: ExponentPack = field(default_factory=ExponentPack)
    tol: float = 1e-9
    max_iter: int = 60
    T1: float | None = None
    dealias: bool = True
    directions: int = 5
    factor_limit: float = 0.9

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Picard tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.T1 is not None and not self.T1 > 0:
            raise ValueError("T1 must be positive")


# ---------------------------------------------------------------- transports

class Transport3D:
    """u . grad g for a free-slip velocity u and a 3D sine scalar g, batched over leading axes."""

    dim = 3

    def __init__(self, n_u: int, n_g: int, dealias: bool = True):
        self.n_u, self.n_g = n_u, n_g
        m = n_g + (n_u + 1) // 2 + 1 if dealias else max(n_g + 1, n_u)
        self.grid = ProductGrid(max(n_u, n_g), m)
        self.ku = [np.arange(n_u)] * 3
        self.kg = [np.arange(1, n_g + 1)] * 3
        self.domain = BoxDomain(3, n_g)

    def __call__(self, u: np.ndarray, g: np.ndarray) -> np.ndarray:
        lead = g.ndim - 3
        acc = 0.0
        for j in range(3):
            dg, kinds = differentiate_axis(g, ("s", "s", "s"), self.kg, j, lead)
            uj = self.grid.synth(u[..., j, :, :, :], FREESLIP_KINDS[j], self.ku, lead)
            acc = acc + uj * self.grid.synth(dg, kinds, self.kg, lead)
        return self.grid.analyze(acc, ("s", "s", "s"), self.kg, lead)


def _profile_integrals(n_u: int):
    """1D integrals of C_1^2 C_k and C_1 S_1 S_k over (0, pi) for k = 0..n_u-1."""
    m = 4 * n_u + 8
    x = (np.arange(m) + 0.5) * math.pi / m
    w = math.pi / m
    k = np.arange(n_u)[:, None]
    c1 = math.sqrt(2 / math.pi) * np.cos(x)
    s1 = math.sqrt(2 / math.pi) * np.sin(x)
    ck = np.where(k == 0, 1 / math.sqrt(math.pi), math.sqrt(2 / math.pi)) * np.cos(k * x)
    sk = math.sqrt(2 / math.pi) * np.sin(k * x)
    return w * (ck @ (c1 * c1)), w * (sk @ (c1 * s1))


class ColumnCoupling:
    """Lift of a vertical temperature profile into the 3D free-slip velocity model.

    Buoyancy: -psi theta e_3 is the u_3 mode (1, 1, l) with coefficient -theta_l.
    Transport: b(z) = int int psi (u . grad(psi g)) dx dy, which keeps the
    skew-symmetry <b, g> = 0 of the 3D operator.
    """

    dim = 1

    def __init__(self, n_u: int, n_t: int):
        if n_u < 2:
            raise ValueError("column coupling needs at least 2 velocity modes per axis")
        self.n_u, self.n_t = n_u, n_t
        cc, cs = _profile_integrals(n_u)
        self.w1 = -np.outer(cs, cc)   # psi psi_x against S_k1(x) C_k2(y)
        self.w2 = -np.outer(cc, cs)   # psi psi_y against C_k1(x) S_k2(y)
        self.w3 = np.outer(cc, cc)    # psi^2 against C_k1(x) C_k2(y)
        self.grid = ProductGrid(max(n_u, n_t), n_t + n_u + 2)
        self.ku = [np.arange(n_u)]
        self.kt = [np.arange(1, n_t + 1)]
        self.domain = BoxDomain(1, n_t)

    def profiles(self, u: np.ndarray):
        """Vertical coefficient profiles (a1 + a2 in cosines, a3 in sines)."""
        a12 = (np.einsum("ij,...ijk->...k", self.w1, u[..., 0, :, :, :])
               + np.einsum("ij,...ijk->...k", self.w2, u[..., 1, :, :, :]))
        a3 = np.einsum("ij,...ijk->...k", self.w3, u[..., 2, :, :, :])
        return a12, a3

    def __call__(self, u: np.ndarray, g: np.ndarray) -> np.ndarray:
        lead = g.ndim - 1
        a12, a3 = self.profiles(u)
        dg, _ = differentiate_axis(g, ("s",), self.kt, 0, lead)
        vals = (self.grid.synth(a12, ("c",), self.ku, lead) * self.grid.synth(g, ("s",), self.kt, lead)
                + self.grid.synth(a3, ("s",), self.ku, lead) * self.grid.synth(dg, ("c",), self.kt, lead))
        return self.grid.analyze(vals, ("s",), self.kt, lead)

    def buoyancy(self, theta: np.ndarray) -> np.ndarray:
        """Free-slip coefficients of -psi theta e_3, shape (..., 3, N_u, N_u, N_u)."""
        n = self.n_u
        out = np.zeros(theta.shape[:-1] + (3, n, n, n))
        top = min(self.n_t, n - 1)
        out[..., 2, 1, 1, 1:top + 1] = -theta[..., :top]
        return out


def transport_term(u: SpectralField, g: SpectralField, dealias: bool = True) -> SpectralField:
    """u . grad g, pseudo-spectrally, for a 3D free-slip u and a 3D sine scalar g."""
    if u.basis != FREESLIP or u.components != 3:
        raise ValueError("transport needs a 3-component free-slip velocity")
    if g.basis != SINE or not g.is_scalar or g.domain.dim != 3:
        raise ValueError("transport needs a 3D sine-basis scalar")
    if not u.divergence_free:
        raise ValueError("velocity must be flagged divergence free")
    tr = Transport3D(u.domain.n, g.domain.n, dealias)
    return SpectralField(g.domain, tr(u.coeffs, g.coeffs[0]))


# --------------------------------------------------------------- convolution

def heat_convolution(b: np.ndarray, mu: np.ndarray, dt: float, start: np.ndarray | None = None) -> np.ndarray:
    """c_0 = start (or 0), c_{n+1} = e^{-mu dt} c_n + phi1 b_n; shape of b is (nt, ...)."""
    decay, w = np.exp(-mu * dt), phi1(mu, dt)
    out = np.empty_like(b)
    out[0] = 0.0 if start is None else start
    for n in range(len(b) - 1):
        out[n + 1] = decay * out[n] + w * b[n]
    return out


def _scalar(traj: Trajectory) -> np.ndarray:
    return traj.coeffs[:, 0]


def compute_chi(u: Trajectory, Z: Trajectory, transport) -> Trajectory:
    """chi_t = int_0^t e^{(t-s) Delta} (u_s . grad Z_s) ds on the common time grid."""
    u.check_grid(Z)
    b = transport(u.coeffs, _scalar(Z))
    chi = heat_convolution(b, Z.domain.eigenvalues(), u.dt)
    return Trajectory(Z.times, chi, Z.domain, SINE)


def ws_sup_norm(coeffs: np.ndarray, domain: BoxDomain, s: float) -> float:
    """max over time of the W^{s,6/5} surrogate norm."""
    return float(np.max(sobolev_norms_q(coeffs, domain, s)))


# ------------------------------------------------------------------- Picard

@dataclass
class ZetaSolution:
    zeta: Trajectory
    block_steps: int
    factors: list
    iterations: list
    residual: float
    step_iters: np.ndarray
    step_factor: np.ndarray


def _random_direction(rng, shape, mu):
    h = rng.standard_normal(shape) * np.exp(-0.5 * np.sqrt(mu))
    h[0] = 0.0
    return h


def picard_solve_zeta(u: Trajectory, Z: Trajectory, theta0: SpectralField, config: PicardConfig,
                      transport, rng: np.random.Generator | None = None,
                      initial: np.ndarray | None = None) -> ZetaSolution:
    """Fixed point of Psi chained over blocks of [0, T].

    ``initial`` is an optional first guess (nt, *modes); the default is the
    free heat evolution of theta0.
    """
    u.check_grid(Z)
    rng = rng or np.random.default_rng(0)
    dom = Z.domain
    mu = dom.eigenvalues()
    s = config.exponents.s
    dt = u.dt
    nt = len(u.times)
    steps = nt - 1
    uc = u.coeffs
    chi_drive = transport(uc, _scalar(Z))
    block = steps if config.T1 is None else max(1, min(steps, int(round(config.T1 / dt))))

    zeta = np.empty((nt,) + (dom.n,) * dom.dim)
    zeta[0] = theta0.coeffs[0]
    factors, iterations = [], []
    step_iters = np.zeros(nt, dtype=int)
    step_factor = np.zeros(nt)
    a = 0
    while a < steps:
        while True:
            b = min(a + block, steps)
            sl = slice(a, b + 1)
            factor = 0.0
            for _ in range(config.directions):
                h = _random_direction(rng, zeta[sl].shape, mu)
                lh = heat_convolution(transport(uc[sl], h), mu, dt)
                factor = max(factor, ws_sup_norm(lh, dom, s) / ws_sup_norm(h, dom, s))
            if factor < config.factor_limit:
                break
            if block == 1:
                raise PicardError(f"no contraction even on a single step (factor {factor:.3f})", factor)
            block = max(1, block // 2)
            log.info("halving Picard block to %d steps (factor %.3f)", block, factor)
        if initial is not None:
            z = np.array(initial[sl], dtype=float)
            z[0] = zeta[a]
        else:
            z = np.exp(-mu * (u.times[sl] - u.times[a])[:, None].reshape((-1,) + (1,) * dom.dim)) * zeta[a]
        block_tol = config.tol * (b - a) / steps
        for it in range(1, config.max_iter + 1):
            new = heat_convolution(-transport(uc[sl], z) - chi_drive[sl], mu, dt, start=zeta[a])
            if not np.all(np.isfinite(new)):
                raise FloatingPointError("NaN in the remainder iteration")
            diff = ws_sup_norm(new - z, dom, s)
            z = new
            if diff <= block_tol:
                break
        else:
            raise PicardError(f"Picard iteration did not converge in {config.max_iter} steps "
                              f"(measured factor {factor:.3f})", factor)
        zeta[sl] = z
        factors.append(factor)
        iterations.append(it)
        step_iters[a + 1:b + 1] = it
        step_factor[a + 1:b + 1] = factor
        a = b
    traj = Trajectory(u.times, zeta, dom, SINE)
    res = picard_residual(traj, u, Z, theta0, transport, s)
    return ZetaSolution(traj, block, factors, iterations, res, step_iters, step_factor)


def psi_map(zeta: Trajectory, u: Trajectory, Z: Trajectory, theta0: SpectralField, transport) -> np.ndarray:
    """One application of Psi over the whole of [0, T]."""
    mu = Z.domain.eigenvalues()
    drive = -transport(u.coeffs, _scalar(zeta)) - transport(u.coeffs, _scalar(Z))
    return heat_convolution(drive, mu, u.dt, start=theta0.coeffs[0])


def picard_residual(zeta: Trajectory, u, Z, theta0, transport, s: float) -> float:
    """||Psi(zeta) - zeta||_{C(W^{s,6/5})} evaluated from scratch."""
    return ws_sup_norm(psi_map(zeta, u, Z, theta0, transport) - _scalar(zeta), zeta.domain, s)


def assemble_theta(zeta: Trajectory, Z: Trajectory, alpha: float | None = None) -> Trajectory:
    zeta.check_grid(Z)
    if zeta.coeffs.shape != Z.coeffs.shape:
        raise ValueError("zeta and Z have different mode layouts")
    theta = zeta.with_coeffs(zeta.coeffs + Z.coeffs)
    if alpha is not None:
        nt, nz, nth = (x.sup_norm(-2 * alpha) for x in (theta, Z, zeta))
        assert nt <= nz + nth + 1e-12 * max(1.0, nz + nth), "triangle inequality violated"
    return theta


def interpolation_norm_u(u: Trajectory, lam: float, delta: float, p: float) -> float:
    """||u||_{L^{p/(lam+delta)}(0,T; H^{1/2+lam})}, checking the interpolation inequality per slice."""
    if not 0 < lam < 1 - delta:
        raise ValueError(f"lambda must lie in (0, 1-delta), got {lam}")
    dprime = 1.0 - lam
    mu = u.domain.eigenvalues(u.basis)
    mid = sobolev_norms(u.coeffs, mu, 1.5 - dprime)
    lo = sobolev_norms(u.coeffs, mu, 0.5 - delta)
    hi = sobolev_norms(u.coeffs, mu, 1.5 - delta)
    bound = lo ** (dprime - delta) * hi ** (1 - dprime + delta)
    if np.any(mid > bound * (1 + 1e-12) + 1e-300):
        raise AssertionError("interpolation inequality violated")
    return time_lp_norm(mid, u.times, p / (lam + delta))


TEMPERATURE_HEADER = ("t", "norm_zeta_Ws65", "norm_theta_Hm2a", "picard_iters", "contraction_factor")


def temperature_rows(sol: ZetaSolution, theta: Trajectory, s: float, alpha: float):
    zn = sobolev_norms_q(_scalar(sol.zeta), sol.zeta.domain, s)
    tn = theta.norms(-2 * alpha)
    for i, t in enumerate(theta.times):
        yield (float(t), float(zn[i]), float(tn[i]), int(sol.step_iters[i]), float(sol.step_factor[i]))
