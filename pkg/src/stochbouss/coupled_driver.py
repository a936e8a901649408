"""Coupled stochastic Boussinesq run on [0, tau].

The temperature is split as theta = Z + zeta.  The noise part Z is simulated
first; tau is the first grid time with ||Z_t||_{H^-2alpha} > eta / (8 M~)
(else T), and everything afterwards lives on [0, tau].

``global_picard`` iterates zeta' -> zeta over the whole window: the velocity
is solved with forcing P(-(Z + zeta') e_3) by the small-data fixed point, then
zeta is the remainder fixed point for that velocity.  ``per_step`` marches
the same discrete equations one step at a time, so both modes converge to
the same discrete solution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .boundary_noise import BoundaryBasis, BoundaryNoiseSpec
from .spectral_core import (FREESLIP, SINE, BoxDomain, ExponentPack, SpectralField, Trajectory,
                            phi1, sobolev_norm)
from .stochastic_convolution import simulate_Z
from .temperature_solver import (ColumnCoupling, PicardConfig, PicardError, assemble_theta,
                                 picard_solve_zeta, ws_sup_norm)
from .velocity_solver import (Convection, NavierStokesBlowup, NavierStokesNotConverged,
                              maxreg_norm, project_coeffs,
                              solve_ns_smalldata, vp_norm)

log = logging.getLogger(__name__)

COUPLING_MODES = ("global_picard", "per_step")


class OuterIterationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoupledConfig:
    """Parameters of one coupled run (1D temperature column, 3D velocity)."""

    eps: float = 1e-2
    T: float = 0.5
    dt: float = 1.0 / 512
    eta: float = 0.5
    M_hat: float = 1.5
    exponents: ExponentPack = field(default_factory=ExponentPack)
    smallness: str = "warn"
    coupling: str = "global_picard"
    max_outer_iter: int = 30
    tol: float = 1e-8
    n_u: int = 16
    n_t: int = 64
    noise_kind: str = "constant"
    noise_c: float = 1.0
    noise_r: float = 0.0
    scheme: str = "exact_variance"
    dealias: bool = True

    def __post_init__(self):
        if self.smallness not in ("strict", "warn"):
            raise ValueError(f"smallness must be 'strict' or 'warn', got {self.smallness!r}")
        if self.coupling not in COUPLING_MODES:
            raise ValueError(f"coupling must be one of {COUPLING_MODES}, got {self.coupling!r}")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if not (self.eta > 0 and self.T > 0 and self.dt > 0):
            raise ValueError("eta, T and dt must be positive")
        if abs(round(self.T / self.dt) * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError("T must be a whole number of time steps")

    @property
    def M_tilde(self) -> float:
        return max(2.0, self.M_hat)

    @property
    def threshold(self) -> float:
        return self.eta / (8.0 * self.M_tilde)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def noise_spec(self, eps: float | None = None) -> BoundaryNoiseSpec:
        eps = self.eps if eps is None else eps
        return BoundaryNoiseSpec(BoundaryBasis(1), self.noise_kind, self.noise_c, self.noise_r,
                                 eps if eps > 0 else 1.0, self.exponents)

    def picard(self) -> PicardConfig:
        return PicardConfig(self.exponents, tol=self.tol / 10, dealias=self.dealias)

    def domains(self):
        return BoxDomain(3, self.n_u), BoxDomain(1, self.n_t)


@dataclass(frozen=True)
class SmallDataCheck:
    ok: bool
    theta_norm: float
    u_norm: float
    bound: float

    @property
    def margins(self) -> tuple[float, float]:
        return self.bound - self.theta_norm, self.bound - self.u_norm


def check_small_data(theta0: SpectralField, u0: SpectralField, eta: float, M_tilde: float,
                     exponents: ExponentPack = ExponentPack()) -> SmallDataCheck:
    """max(||theta0||_{W^{s,6/5}}, ||u0||_{V_p}) <= eta / (16 M~)."""
    tn = sobolev_norm(theta0, exponents.s, 1.2)
    un = vp_norm(u0, exponents.p, exponents.delta)
    bound = eta / (16.0 * M_tilde)
    ok = max(tn, un) <= bound * (1 + 1e-12)
    return SmallDataCheck(bool(ok), tn, un, bound)


def stopping_index(norms: np.ndarray, threshold: float) -> np.ndarray:
    """Index of the first grid time with norm > threshold (last index if none), per row."""
    norms = np.atleast_2d(norms)
    above = norms > threshold
    first = np.argmax(above, axis=1)
    return np.where(above.any(axis=1), first, norms.shape[1] - 1)


def stopping_time(Z: Trajectory, threshold: float, alpha: float) -> tuple[float, int]:
    """tau = first grid time with ||Z_t||_{H^-2alpha} > threshold, else T."""
    idx = int(stopping_index(Z.norms(-2 * alpha), threshold)[0])
    return float(Z.times[idx]), idx


@dataclass(frozen=True, eq=False)
class RunReport:
    replica_id: int
    seed: int | None
    tau: float
    hit: bool
    norm_u_E: float
    norm_theta_C: float
    outer_iters: int
    velocity_cert: dict
    warnings: tuple = ()
    fields: dict = field(default_factory=dict, repr=False)

    def record(self) -> dict:
        return {"replica": self.replica_id, "seed": self.seed, "tau": self.tau, "hit": int(self.hit),
                "norm_u_E": self.norm_u_E, "norm_theta_C": self.norm_theta_C,
                "outer_iters": self.outer_iters}

    def same_as(self, other: "RunReport") -> bool:
        return (self.record() == other.record() and self.velocity_cert == other.velocity_cert
                and self.warnings == other.warnings)


def simulate_noise_path(config: CoupledConfig, rng: np.random.Generator) -> Trajectory:
    """Z on [0, T] for one replica (zero when eps = 0; the generator is still advanced)."""
    _, dom_t = config.domains()
    ens = simulate_Z(config.noise_spec(1.0), dom_t, config.T, config.dt, rng, paths=1,
                     scheme=config.scheme, record=True)
    z = math.sqrt(config.eps) * ens.coeffs[0]
    return Trajectory(ens.times, z, dom_t, SINE)


def _march(config, coupling, conv, Z, theta0, u0, steps):
    """Per-step march of the discrete coupled system."""
    dom_u, dom_t = config.domains()
    mu_u, mu_t = dom_u.eigenvalues(FREESLIP), dom_t.eigenvalues()
    eu, wu = np.exp(-mu_u * config.dt), phi1(mu_u, config.dt)
    et, wt = np.exp(-mu_t * config.dt), phi1(mu_t, config.dt)
    u = np.zeros((steps + 1, 3) + (dom_u.n,) * 3)
    zeta = np.zeros((steps + 1, dom_t.n))
    u[0] = project_coeffs(u0.coeffs)
    zeta[0] = theta0.coeffs[0]
    z = Z.coeffs[:, 0]
    for n in range(steps):
        force = project_coeffs(coupling.buoyancy(z[n] + zeta[n])) - conv(u[n])
        u[n + 1] = eu * u[n] + wu * force
        zeta[n + 1] = et * zeta[n] - wt * (coupling(u[n], zeta[n]) + coupling(u[n], z[n]))
        if not (np.all(np.isfinite(u[n + 1])) and np.all(np.isfinite(zeta[n + 1]))):
            raise NavierStokesBlowup(f"non-finite state at step {n + 1}", [])
    return u, zeta


def run_coupled(config: CoupledConfig, theta0: SpectralField, u0: SpectralField,
                rng: np.random.Generator, replica_id: int = 0, seed: int | None = None,
                initial_zeta: str = "zero", Z: Trajectory | None = None,
                keep_fields: bool = False) -> RunReport:
    """One coupled run; never raises for solver failures, which land in ``warnings``."""
    warnings = []
    check = check_small_data(theta0, u0, config.eta, config.M_tilde, config.exponents)
    if not check.ok:
        if config.smallness == "strict":
            raise ValueError(f"initial data too large: max({check.theta_norm:.3e}, "
                             f"{check.u_norm:.3e}) > {check.bound:.3e}")
        warnings.append("small-data condition violated")
    dom_u, dom_t = config.domains()
    Z = simulate_noise_path(config, rng) if Z is None else Z
    alpha = config.exponents.alpha
    tau, idx = stopping_time(Z, config.threshold, alpha)
    hit = idx < config.steps
    if idx < 2:
        warnings.append("stopped within two steps; norms not evaluated")
        return RunReport(replica_id, seed, tau, hit, math.nan, math.nan, 0, {}, tuple(warnings))
    Zt = Z.truncate(idx)
    coupling = ColumnCoupling(config.n_u, config.n_t)
    conv = Convection(config.n_u, config.dealias)
    p, delta = config.exponents.p, config.exponents.delta
    cert = {}
    outer = 0
    try:
        if config.coupling == "per_step":
            u, zeta = _march(config, coupling, conv, Zt, theta0, u0, idx)
            u_traj = Trajectory(Zt.times, u, dom_u, FREESLIP)
            zeta_traj = Trajectory(Zt.times, zeta, dom_t, SINE)
            outer = 1
            sol = None
            norms = maxreg_norm(u_traj, p, delta)
            cert = {"eta": config.eta, "M_hat": config.M_hat, "d": math.nan, "iterations": 0,
                    "norm_E": norms.value, "small_data": check.ok,
                    "within_eta": bool(norms.value <= config.eta), "data_size": math.nan}
        else:
            u_traj, sol, outer, vcert = _global_picard(config, coupling, conv, Zt, theta0,
                                                       u0, rng, initial_zeta)
            zeta_traj = sol.zeta
            cert = vcert.as_record()
    except (NavierStokesBlowup, NavierStokesNotConverged, PicardError, OuterIterationError,
            FloatingPointError) as exc:
        warnings.append(f"{type(exc).__name__}: {exc}")
        return RunReport(replica_id, seed, tau, hit, math.nan, math.nan, outer, cert, tuple(warnings))
    theta = assemble_theta(zeta_traj, Zt, alpha)
    norm_u = maxreg_norm(u_traj, p, delta).value
    norm_theta = theta.sup_norm(-2 * alpha)
    if norm_u > config.eta:
        warnings.append("velocity E-norm exceeds eta")
    if norm_theta > config.eta:
        warnings.append("temperature norm exceeds eta")
    fields = {}
    if keep_fields:
        fields = {"u": u_traj, "zeta": zeta_traj, "Z": Zt, "theta": theta, "zeta_solution": sol}
    return RunReport(replica_id, seed, tau, hit, norm_u, norm_theta, outer, cert, tuple(warnings),
                     fields)


def _global_picard(config, coupling, conv, Z, theta0, u0, rng, initial_zeta):
    dom_u, dom_t = config.domains()
    times = Z.times
    T = float(times[-1])
    mu_t = dom_t.eigenvalues()
    if initial_zeta == "zero":
        zeta_p = np.zeros((len(times), dom_t.n))
        zeta_p[0] = theta0.coeffs[0]
    elif initial_zeta == "heat":
        zeta_p = np.exp(-np.outer(times, mu_t)) * theta0.coeffs[0]
    else:
        raise ValueError(f"unknown initial guess {initial_zeta!r}")
    z = Z.coeffs[:, 0]
    s = config.exponents.s
    u_guess = None
    for it in range(1, config.max_outer_iter + 1):
        force = Trajectory(times, coupling.buoyancy(z + zeta_p), dom_u, FREESLIP)
        u, vcert = solve_ns_smalldata(force, u0, T, config.dt, config.eta, config.M_tilde,
                                      config.exponents.p, config.exponents.delta,
                                      tol=config.tol / 10, convection=conv, initial=u_guess)
        sol = picard_solve_zeta(u, Z, theta0, config.picard(), coupling, rng)
        zeta = sol.zeta.coeffs[:, 0]
        diff = ws_sup_norm(zeta - zeta_p, dom_t, s)
        zeta_p = zeta
        u_guess = u
        if diff < config.tol:
            vcert.history = []
            return u, sol, it, vcert
    raise OuterIterationError(f"outer iteration did not converge in {config.max_outer_iter} steps")


def uniqueness_probe(config: CoupledConfig, theta0: SpectralField, u0: SpectralField,
                     seed: int) -> dict:
    """Run the global iteration from zeta' = 0 and from zeta' = e^{t Delta} theta0 on the same noise."""
    cfg = replace(config, coupling="global_picard")
    Z = simulate_noise_path(cfg, np.random.default_rng(seed))
    runs = [run_coupled(cfg, theta0, u0, np.random.default_rng(seed), Z=Z, initial_zeta=g,
                        keep_fields=True) for g in ("zero", "heat")]
    a, b = (r.fields["zeta"].coeffs[:, 0] for r in runs)
    ua, ub = (r.fields["u"] for r in runs)
    du = maxreg_norm(ua.with_coeffs(ua.coeffs - ub.coeffs), cfg.exponents.p, cfg.exponents.delta).value
    return {"zeta_diff": ws_sup_norm(a - b, runs[0].fields["zeta"].domain, cfg.exponents.s),
            "u_diff_E": du, "tol": cfg.tol, "reports": runs}


def standard_data(config: CoupledConfig, fraction: float = 0.5):
    """Single-mode initial data at ``fraction`` of the small-data bound."""
    dom_u, dom_t = config.domains()
    bound = config.eta / (16.0 * config.M_tilde)
    th = SpectralField.unit_mode(dom_t, (1,))
    th = th * (fraction * bound / sobolev_norm(th, config.exponents.s, 1.2))
    c = np.zeros((3,) + (dom_u.n,) * 3)
    c[0, 1, 1, 1], c[1, 1, 1, 1], c[2, 1, 1, 1] = 1.0, -1.0, 0.0
    u0 = SpectralField(dom_u, project_coeffs(c), FREESLIP, divergence_free=True)
    u0 = u0 * (fraction * bound / vp_norm(u0, config.exponents.p, config.exponents.delta))
    return th, SpectralField(dom_u, u0.coeffs, FREESLIP, divergence_free=True)
