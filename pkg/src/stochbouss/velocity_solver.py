"""Weak Stokes evolution, maximal-regularity norms and the small-data Navier-Stokes fixed point.

Velocities live in the free-slip basis of :mod:`stochbouss.spectral_core`
(component i sine in x_i, cosine elsewhere, wavevectors k in {0..N-1}^3).
There the divergence of u is sum_i k_i u_i(k), gradients of cosine pressures
are -k p(k), and the Leray projector is u - k (k . u) / |k|^2 per wavevector.
The weak Stokes operator is A_w u = |k|^2 u on solenoidal fields.

Time stepping is the exponential integrator with left-point forcing

    u_{n+1} = e^{-|k|^2 dt} u_n + phi1(|k|^2, dt) P f_n.

The normal velocity vanishes on the walls exactly; the tangential (no-slip)
condition is not imposed and its residual is reported.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_core import (FREESLIP, FREESLIP_KINDS, BoxDomain, ProductGrid, SpectralField,
                            Trajectory, _freeslip_mask, _power, dealiased_size,
                            differentiate_axis, phi1, sobolev_norms, time_lp_norm)

log = logging.getLogger(__name__)


class NotDivergenceFree(ValueError):
    pass


class NavierStokesBlowup(RuntimeError):
    """The small-data iteration diverged; carries the iteration history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class NavierStokesNotConverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def _wavevectors(n):
    k = np.arange(n, dtype=float)
    return (k[:, None, None], k[None, :, None], k[None, None, :])


# ---------------------------------------------------------------- projector

def divergence_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Cosine-basis coefficients of div u for arrays (..., 3, N, N, N)."""
    k1, k2, k3 = _wavevectors(coeffs.shape[-1])
    return k1 * coeffs[..., 0, :, :, :] + k2 * coeffs[..., 1, :, :, :] + k3 * coeffs[..., 2, :, :, :]


def project_coeffs(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[-1]
    k1, k2, k3 = _wavevectors(n)
    kk = k1**2 + k2**2 + k3**2
    inv = np.zeros_like(kk)
    inv[kk > 0] = 1.0 / kk[kk > 0]
    div = divergence_coeffs(coeffs) * inv
    out = np.array(coeffs, dtype=float, copy=True)
    out[..., 0, :, :, :] -= k1 * div
    out[..., 1, :, :, :] -= k2 * div
    out[..., 2, :, :, :] -= k3 * div
    return out * _freeslip_mask(n)


def leray_project(f: SpectralField) -> SpectralField:
    """L^2-orthogonal projection onto divergence-free fields."""
    if f.basis != FREESLIP:
        raise ValueError("leray_project needs a free-slip vector field")
    return SpectralField(f.domain, project_coeffs(f.coeffs), FREESLIP, divergence_free=True)


def divergence_residual(coeffs: np.ndarray) -> float:
    """||div u||_2 / ||u||_{H^1} (0 for u = 0)."""
    n = coeffs.shape[-1]
    mu = _eig(n)
    h1 = math.sqrt(float(np.sum(mu * coeffs**2)))
    if h1 == 0:
        return 0.0
    return float(np.sqrt(np.sum(divergence_coeffs(coeffs) ** 2)) / h1)


def _eig(n):
    return BoxDomain(3, n).eigenvalues(FREESLIP)


def gradient_field(phi: np.ndarray, domain: BoxDomain) -> SpectralField:
    """grad of a cosine-basis scalar with coefficients phi (N, N, N)."""
    k1, k2, k3 = _wavevectors(domain.n)
    g = np.stack([-k1 * phi, -k2 * phi, -k3 * phi]) * _freeslip_mask(domain.n)
    return SpectralField(domain, g, FREESLIP)


def slip_residual(coeffs: np.ndarray) -> float:
    """RMS tangential velocity on the six walls (the no-slip defect)."""
    n = coeffs.shape[-1]
    x = np.array([0.0, math.pi])
    sq2 = math.sqrt(2.0 / math.pi)
    k = np.arange(n)
    cos_w = np.where(k == 0, 1.0 / math.sqrt(math.pi), sq2) * np.cos(np.outer(x, k))  # (2, n)
    grid = ProductGrid(n, n)
    total = 0.0
    count = 0
    for i in range(3):
        for wall_axis in range(3):
            if wall_axis == i:
                continue
            # component i is a cosine along wall_axis: evaluate on that wall, grid elsewhere
            c = np.tensordot(cos_w, coeffs[i], axes=([1], [wall_axis]))  # (2, rest...)
            kinds = [kd for a, kd in enumerate(FREESLIP_KINDS[i]) if a != wall_axis]
            vals = np.stack([grid.synth(c[side], kinds) for side in range(2)])
            total += float(np.sum(vals**2))
            count += vals.size
    return math.sqrt(total / count) if count else 0.0


# ------------------------------------------------------------ weak Stokes

def weak_stokes_apply(u: SpectralField, tol: float = 1e-8) -> SpectralField:
    """A_w u = P(-Delta u) for divergence-free u."""
    if u.basis != FREESLIP:
        raise ValueError("weak_stokes_apply needs a free-slip vector field")
    if divergence_residual(u.coeffs) > tol:
        raise NotDivergenceFree("weak Stokes operator applied to a field that is not divergence free")
    return SpectralField(u.domain, u.eigenvalues() * u.coeffs, FREESLIP, divergence_free=True)


def gradient_pairing_quadrature(u: SpectralField, v: SpectralField) -> float:
    """sum over a midpoint grid of grad u : grad v (exact quadrature for the stored modes)."""
    n = u.domain.n
    grid = ProductGrid(n, n + 1)
    total = 0.0
    for i in range(3):
        for j in range(3):
            cu, kinds = differentiate_axis(u.coeffs[i], FREESLIP_KINDS[i], [np.arange(n)] * 3, j)
            cv, _ = differentiate_axis(v.coeffs[i], FREESLIP_KINDS[i], [np.arange(n)] * 3, j)
            total += float(np.sum(grid.synth(cu, kinds) * grid.synth(cv, kinds)))
    return total * grid.weight


# -------------------------------------------------------------- convection

class Convection:
    """P(u . grad v) for free-slip fields, batched over leading axes."""

    def __init__(self, n: int, dealias: bool = True):
        self.n = n
        self.grid = ProductGrid(n, dealiased_size(n) if dealias else n)
        self.ks = [np.arange(n)] * 3

    def _synth_grouped(self, items, lead):
        """Synthesize (key, coeffs, kinds) items, one transform call per distinct kinds tuple."""
        groups = {}
        for key, c, kinds in items:
            groups.setdefault(kinds, []).append((key, c))
        out = {}
        for kinds, members in groups.items():
            vals = self.grid.synth(np.stack([c for _, c in members], axis=lead), kinds, self.ks, lead + 1)
            for i, (key, _) in enumerate(members):
                out[key] = vals[(slice(None),) * lead + (i,)]
        return out

    def __call__(self, u: np.ndarray, v: np.ndarray | None = None, project: bool = True) -> np.ndarray:
        lead = u.ndim - 4
        v = u if v is None else v
        items = [(("u", j), u[..., j, :, :, :], FREESLIP_KINDS[j]) for j in range(3)]
        for i in range(3):
            for j in range(3):
                dv, kinds = differentiate_axis(v[..., i, :, :, :], FREESLIP_KINDS[i], self.ks, j, lead)
                items.append((("dv", i, j), dv, kinds))
        g = self._synth_grouped(items, lead)
        out = np.zeros(np.broadcast_shapes(u.shape, v.shape))
        for i in range(3):
            acc = sum(g[("u", j)] * g[("dv", i, j)] for j in range(3))
            out[..., i, :, :, :] = self.grid.analyze(acc, FREESLIP_KINDS[i], self.ks, lead)
        out = out * _freeslip_mask(self.n)
        return project_coeffs(out) if project else out


# ------------------------------------------------------------ linear Stokes

def solve_linear_stokes(f: Trajectory | None, u0: SpectralField, T: float, dt: float) -> Trajectory:
    """Exponential integrator for d_t v + A_w v = P f, v(0) = u0, on [0, T].

    ``f`` is sampled on the same grid (its last sample is unused); None means f = 0.
    """
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    times = dt * np.arange(steps + 1)
    if f is not None and len(f.times) != steps + 1:
        raise ValueError(f"forcing has {len(f.times)} samples, grid has {steps + 1}")
    n = u0.domain.n
    mu = u0.eigenvalues()
    decay = np.exp(-mu * dt)
    w = phi1(mu, dt)
    out = np.zeros((steps + 1, 3, n, n, n))
    out[0] = project_coeffs(u0.coeffs)
    pf = None if f is None else project_coeffs(f.coeffs)
    for i in range(steps):
        out[i + 1] = decay * out[i]
        if pf is not None:
            out[i + 1] += w * pf[i]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("NaN in linear Stokes solve")
    return Trajectory(times, out, u0.domain, FREESLIP)


# ------------------------------------------------------- max-regularity norms

@dataclass(frozen=True)
class MaxRegNorms:
    """Norm of a trajectory in E_{T,p} = W^{1,p}(H^{-1/2-delta}) cap L^p(H^{3/2-delta})."""

    p: float
    delta: float
    value: float
    dudt_part: float
    spatial_part: float
    vp_initial: float

    @property
    def vp_exponent(self) -> float:
        return 1.5 - self.delta - 2.0 / self.p


def time_derivative(coeffs: np.ndarray, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at both ends."""
    return np.gradient(coeffs, dt, axis=0)


def maxreg_norm(u: Trajectory, p: float, delta: float) -> MaxRegNorms:
    if len(u.times) < 3:
        raise ValueError("maximal-regularity norm needs at least 3 time points")
    mu = u.domain.eigenvalues(u.basis)
    du = time_derivative(u.coeffs, u.dt)
    d_part = time_lp_norm(sobolev_norms(du, mu, -0.5 - delta), u.times, p)
    s_part = time_lp_norm(sobolev_norms(u.coeffs, mu, 1.5 - delta), u.times, p)
    vp = float(sobolev_norms(u.coeffs[:1], mu, 1.5 - delta - 2.0 / p)[0])
    return MaxRegNorms(p, delta, d_part + s_part, d_part, s_part, vp)


def forcing_norm(f: Trajectory, p: float, delta: float) -> float:
    """||P f||_{L^p(0,T; H^{-1/2-delta})}."""
    mu = f.domain.eigenvalues(f.basis)
    return time_lp_norm(sobolev_norms(project_coeffs(f.coeffs), mu, -0.5 - delta), f.times, p)


def vp_norm(u0: SpectralField, p: float, delta: float) -> float:
    """Spectral surrogate of the trace-space norm: H^{3/2 - delta - 2/p}."""
    return float(np.sqrt(np.sum(_power(u0.eigenvalues(), 1.5 - delta - 2.0 / p) * u0.coeffs**2)))


# ------------------------------------------------------------- random data

def random_solenoidal(domain: BoxDomain, rng: np.random.Generator, decay: float = 1.0,
                      size=()) -> np.ndarray:
    """Projected Gaussian coefficients with spectrum exp(-decay |k|), shape (*size, 3, N, N, N)."""
    n = domain.n
    mu = domain.eigenvalues(FREESLIP)
    c = rng.standard_normal(tuple(np.atleast_1d(size).astype(int)) + (3, n, n, n))
    return project_coeffs(c * np.exp(-decay * np.sqrt(mu)))


def single_mode_probe(domain: BoxDomain, rng: np.random.Generator) -> np.ndarray:
    """A projected field concentrated on one random wavevector."""
    n = domain.n
    while True:
        k = rng.integers(0, n, size=3)
        if np.count_nonzero(k) >= 2:
            break
    c = np.zeros((3, n, n, n))
    c[:, k[0], k[1], k[2]] = rng.standard_normal(3)
    c = project_coeffs(c)
    if np.abs(c).sum() == 0:
        return single_mode_probe(domain, rng)
    return c


def _time_profile(times, rng):
    kind = rng.integers(0, 3)
    T = times[-1]
    if kind == 0:
        return np.ones_like(times)
    if kind == 1:
        return np.cos(2 * math.pi * rng.uniform(0.5, 4.0) * times / T + rng.uniform(0, 2 * math.pi))
    return np.exp(-rng.uniform(0.0, 10.0) * times / T)


def estimate_M(T: float, delta: float, p: float, n_probes: int, rng: np.random.Generator,
               domain: BoxDomain | None = None, dt: float | None = None) -> tuple[float, np.ndarray]:
    """Largest ratio ||v||_E / (||f||_{L^p(H^{-1/2-delta})} + ||u0||_{V_p}) over random probes.

    Each probe is a single projected mode with a random wavevector for u0
    and/or f (time profile constant, oscillating or decaying).
    """
    if n_probes < 10:
        raise ValueError(f"need at least 10 probes, got {n_probes}")
    domain = domain or BoxDomain(3, 8)
    dt = dt or T / 64
    times = dt * np.arange(int(round(T / dt)) + 1)
    ratios = np.empty(n_probes)
    for i in range(n_probes):
        which = rng.integers(0, 3)
        u0 = single_mode_probe(domain, rng) if which != 1 else np.zeros((3,) + (domain.n,) * 3)
        if which != 0:
            prof = _time_profile(times, rng)
            f = Trajectory(times, prof[:, None, None, None, None] * single_mode_probe(domain, rng),
                           domain, FREESLIP)
        else:
            f = None
        u0f = SpectralField(domain, u0, FREESLIP)
        v = solve_linear_stokes(f, u0f, T, dt)
        num = maxreg_norm(v, p, delta).value
        den = (0.0 if f is None else forcing_norm(f, p, delta)) + vp_norm(u0f, p, delta)
        ratios[i] = num / den if den > 0 else 0.0
    return float(ratios.max()), ratios


def convective_probe(u: Trajectory, v: Trajectory, p: float, delta: float,
                     convection: Convection | None = None) -> float:
    """||P(u . grad v)||_{L^p(H^{-1/2-delta})} / (||u||_E ||v||_E), with 0/0 read as 0."""
    if not p > 2.0 / (1.0 - delta):
        raise ValueError("bilinear estimate needs p > 2/(1-delta)")
    u.check_grid(v)
    conv = convection or Convection(u.domain.n)
    nu = maxreg_norm(u, p, delta).value
    nv = maxreg_norm(v, p, delta).value
    if nu == 0 or nv == 0:
        return 0.0
    b = conv(u.coeffs, v.coeffs)
    mu = u.domain.eigenvalues(FREESLIP)
    num = time_lp_norm(sobolev_norms(b, mu, -0.5 - delta), u.times, p)
    return num / (nu * nv)


def mixed_derivative_norm(u: Trajectory, p: float, delta: float) -> float:
    """Discrete H^{1/2,p}(0,T; H^{1/2-delta}) surrogate.

    L^p norm plus the Sobolev-Slobodeckij seminorm
    (int int ||u(t) - u(s)||^p / |t - s|^{1 + p/2} ds dt)^{1/p} on the grid.
    """
    mu = u.domain.eigenvalues(u.basis)
    w = _power(mu, 0.5 - delta)
    flat = (np.sqrt(w) * u.coeffs).reshape(len(u.times), -1)
    lp = time_lp_norm(np.sqrt(np.sum(flat**2, axis=1)), u.times, p)
    gram = flat @ flat.T
    sq = np.diag(gram)[:, None] + np.diag(gram)[None, :] - 2 * gram
    diff = np.sqrt(np.maximum(sq, 0.0))
    lag = np.abs(u.times[:, None] - u.times[None, :])
    off = lag > 0
    integrand = np.zeros_like(lag)
    integrand[off] = diff[off] ** p / lag[off] ** (1 + p / 2)
    semi = float(np.sum(integrand) * u.dt**2) ** (1.0 / p)
    return lp + semi


# --------------------------------------------------- small-data fixed point

@dataclass
class VelocityCertificate:
    eta: float
    M_hat: float
    d: float
    iterations: int
    norm_E: float
    small_data: bool
    within_eta: bool
    data_size: float
    history: list = field(default_factory=list)

    def as_record(self) -> dict:
        return {"eta": self.eta, "M_hat": self.M_hat, "d": self.d, "iterations": self.iterations,
                "norm_E": self.norm_E, "small_data": self.small_data,
                "within_eta": self.within_eta, "data_size": self.data_size}


def march_navier_stokes(f: Trajectory | None, u0: SpectralField, T: float, dt: float,
                        convection: Convection) -> Trajectory:
    """Direct time march of the same discrete scheme the fixed point converges to."""
    steps = int(round(T / dt))
    n = u0.domain.n
    mu = u0.eigenvalues()
    decay, w = np.exp(-mu * dt), phi1(mu, dt)
    out = np.zeros((steps + 1, 3, n, n, n))
    out[0] = project_coeffs(u0.coeffs)
    pf = None if f is None else project_coeffs(f.coeffs)
    for i in range(steps):
        rhs = -convection(out[i])
        if pf is not None:
            rhs = rhs + pf[i]
        out[i + 1] = decay * out[i] + w * rhs
        if not np.all(np.isfinite(out[i + 1])):
            raise NavierStokesBlowup(f"non-finite velocity at step {i + 1}", [])
    return Trajectory(dt * np.arange(steps + 1), out, u0.domain, FREESLIP)


def solve_ns_smalldata(f: Trajectory | None, u0: SpectralField, T: float, dt: float,
                       eta: float, M_hat: float, p: float = 4.0, delta: float = 0.05,
                       tol: float = 1e-8, max_iter: int = 50, convection: Convection | None = None,
                       initial: Trajectory | None = None) -> tuple[Trajectory, VelocityCertificate]:
    """Global-in-time Picard iteration v <- v_* - (solution operator) P(v . grad v).

    Converged when successive E-norm differences drop below ``tol``.  The
    contraction factor d is the largest ratio of successive differences.
    """
    conv = convection or Convection(u0.domain.n)
    data = max(vp_norm(u0, p, delta), 0.0 if f is None else forcing_norm(f, p, delta))
    small = data <= eta / (4.0 * M_hat) * (1 + 1e-12)
    if not small:
        log.warning("data size %.3e exceeds the smallness bound %.3e", data, eta / (4 * M_hat))
    v_star = solve_linear_stokes(f, u0, T, dt)
    v = v_star if initial is None else initial
    history = []
    prev_diff = None
    d = 0.0
    base = maxreg_norm(v_star, p, delta).value
    for it in range(1, max_iter + 1):
        nonlin = -conv(v.coeffs)
        w = solve_linear_stokes(Trajectory(v.times, nonlin, u0.domain, FREESLIP),
                                SpectralField.zeros(u0.domain, 3, FREESLIP), T, dt)
        new = v_star.with_coeffs(v_star.coeffs + w.coeffs)
        diff = maxreg_norm(new.with_coeffs(new.coeffs - v.coeffs), p, delta).value
        norm_new = maxreg_norm(new, p, delta).value
        history.append((diff, norm_new))
        if prev_diff is not None and prev_diff > 0:
            d = max(d, diff / prev_diff)
        if not np.isfinite(norm_new) or norm_new > 1e6 * max(base, 1e-300) + 1e3:
            raise NavierStokesBlowup("E-norm grew without bound", history)
        if len(history) >= 4 and all(history[-j][0] > history[-j - 1][0] for j in (1, 2, 3)):
            raise NavierStokesBlowup("successive differences grew three times in a row", history)
        v = new
        if diff < tol:
            cert = VelocityCertificate(eta, M_hat, d, it, norm_new, bool(small),
                                       bool(norm_new <= eta), data, history)
            return v, cert
        prev_diff = diff
    raise NavierStokesNotConverged(f"no convergence in {max_iter} iterations", history)


VELOCITY_HEADER = ("t", "norm_u_H32md", "norm_dudt_Hm12md", "div_residual", "slip_residual")


def velocity_rows(u: Trajectory, delta: float):
    mu = u.domain.eigenvalues(FREESLIP)
    spatial = sobolev_norms(u.coeffs, mu, 1.5 - delta)
    dudt = sobolev_norms(time_derivative(u.coeffs, u.dt), mu, -0.5 - delta)
    for i, t in enumerate(u.times):
        yield (float(t), float(spatial[i]), float(dudt[i]), divergence_residual(u.coeffs[i]),
               slip_residual(u.coeffs[i]))
