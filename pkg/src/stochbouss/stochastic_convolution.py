"""Boundary-noise stochastic convolution Z and its smoothed version xi = Delta^-alpha Z.

Per interior mode j the convolution is an Ornstein-Uhlenbeck coordinate

    z_j(t) = sqrt(eps) * int_0^t mu_j exp(-mu_j (t - s)) sum_k d_jk lambda_k dbeta_k(s),

stepped with an exponential integrator.  Two noise weights are available:

``left_point``      z_j <- e^{-mu dt} z_j + sqrt(eps) mu e^{-mu dt} sum_k d_jk dW_k
``exact_variance``  the weight sqrt(mu (1 - e^{-2 mu dt}) / (2 dt)) replaces mu e^{-mu dt},
                    so each mode's one-step variance equals the Ito-isometry value
                    for every dt (cross-mode correlation inside one step is still
                    approximated).

Paths are batched along a leading axis.  Noise increments are drawn at unit
intensity and scaled by sqrt(eps), so paths at different eps driven by the
same generator state are exact rescalings of each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from .boundary_noise import (BoundaryNoiseSpec, dirichlet_coefficients, projection_matrix,
                             sample_boundary_increment)
from .spectral_core import BoxDomain, SpectralField, _power

SCHEMES = ("exact_variance", "left_point")


def noise_weights(mu: np.ndarray, dt: float, scheme: str) -> np.ndarray:
    if scheme == "left_point":
        return mu * np.exp(-mu * dt)
    if scheme == "exact_variance":
        return np.sqrt(mu * -np.expm1(-2.0 * mu * dt) / (2.0 * dt))
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


@dataclass(frozen=True, eq=False)
class ConvolutionState:
    """Z at time t for a batch of paths (leading axis) with the running sup of ||Z||_{H^-2alpha}."""

    t: float
    z: np.ndarray
    running_sup: np.ndarray
    spec: BoundaryNoiseSpec
    domain: BoxDomain
    scheme: str = "exact_variance"

    @property
    def eps(self) -> float:
        return self.spec.eps

    @property
    def alpha(self) -> float:
        return self.spec.exponents.alpha

    def norm(self) -> np.ndarray:
        """||Z_t||_{H^-2alpha} per path."""
        w = _power(self.domain.eigenvalues(), -2.0 * self.alpha)
        axes = tuple(range(1, self.z.ndim))
        return np.sqrt(np.sum(w * self.z**2, axis=axes))

    def projection_row(self, j) -> np.ndarray:
        """d_jk for one interior mode index tuple j."""
        eye = np.eye(self.spec.basis.size)
        return dirichlet_coefficients(eye, self.spec.basis, self.domain)[(slice(None),) + tuple(j)]


def initial_state(spec: BoundaryNoiseSpec, domain: BoxDomain, paths: int = 1,
                  scheme: str = "exact_variance") -> ConvolutionState:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    z = np.zeros((paths,) + (domain.n,) * domain.dim)
    return ConvolutionState(0.0, z, np.zeros(paths), spec, domain, scheme)


def step_Z(state: ConvolutionState, dt: float, increment: np.ndarray) -> ConvolutionState:
    """Advance Z by dt given lambda-weighted boundary increments of shape (paths, basis.size).

    ``increment`` must have been sampled with the same dt; a mismatch is
    detected only through its shape, so callers own the dt bookkeeping.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    increment = np.asarray(increment, dtype=float)
    if increment.ndim == 1:
        increment = increment[np.newaxis]
    if increment.shape != (state.z.shape[0], state.spec.basis.size):
        raise ValueError(f"increment shape {increment.shape} inconsistent with state "
                         f"({state.z.shape[0]} paths, {state.spec.basis.size} boundary modes)")
    mu = state.domain.eigenvalues()
    drive = dirichlet_coefficients(increment, state.spec.basis, state.domain)
    g = noise_weights(mu, dt, state.scheme)
    z = np.exp(-mu * dt) * state.z + math.sqrt(state.eps) * g * drive
    new = replace(state, t=state.t + dt, z=z)
    return replace(new, running_sup=np.maximum(state.running_sup, new.norm()))


def compute_xi(state: ConvolutionState, path: int = 0) -> SpectralField:
    """xi = Delta^-alpha Z for one path."""
    w = _power(state.domain.eigenvalues(), -state.alpha)
    return SpectralField(state.domain, w * state.z[path])


@dataclass(frozen=True, eq=False)
class ZEnsemble:
    """Simulated paths of Z on a uniform grid.

    ``norms`` has shape (paths, steps + 1) and holds ||Z_t||_{H^-2alpha};
    ``coeffs`` (paths, steps + 1, *modes) is kept only when requested.
    """

    times: np.ndarray
    norms: np.ndarray
    sup: np.ndarray
    final: np.ndarray
    spec: BoundaryNoiseSpec
    domain: BoxDomain
    coeffs: np.ndarray | None = None

    @property
    def paths(self) -> int:
        return self.norms.shape[0]

    def xi_coeffs(self) -> np.ndarray:
        if self.coeffs is None:
            raise ValueError("ensemble was simulated without recording coefficients")
        return _power(self.domain.eigenvalues(), -self.spec.exponents.alpha) * self.coeffs

    def rescaled(self, eps: float) -> "ZEnsemble":
        """The same paths at intensity eps (Z is linear in sqrt(eps))."""
        f = math.sqrt(eps / self.spec.eps)
        return ZEnsemble(self.times, f * self.norms, f * self.sup, f * self.final,
                         replace(self.spec, eps=eps), self.domain,
                         None if self.coeffs is None else f * self.coeffs)


def simulate_Z(spec: BoundaryNoiseSpec, domain: BoxDomain, T: float, dt: float,
               rng: np.random.Generator, paths: int = 1, scheme: str = "exact_variance",
               record: bool = False, alpha: float | None = None, track: bool = True) -> ZEnsemble:
    """Simulate ``paths`` independent copies of Z on [0, T].

    ``alpha`` overrides the norm exponent (default: the spec's alpha).  With
    ``track=False`` norms are only evaluated at t = 0 and T, and ``sup`` is NaN.
    """
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    alpha = spec.exponents.alpha if alpha is None else alpha
    state = initial_state(spec, domain, paths, scheme)
    norms = np.zeros((paths, steps + 1))
    coeffs = np.zeros((paths, steps + 1) + state.z.shape[1:]) if record else None
    mu = domain.eigenvalues().ravel()
    decay = np.exp(-mu * dt)
    # noise drive as one matrix product: (paths, size) @ (size, modes)
    drive = (math.sqrt(spec.eps) * noise_weights(mu, dt, scheme))[:, None] * projection_matrix(spec.basis, domain)
    drive = np.ascontiguousarray(drive.T)
    w = _power(mu, -2.0 * alpha)
    z = np.zeros((paths, mu.size))
    for n in range(1, steps + 1):
        inc = sample_boundary_increment(spec, dt, rng, size=paths)
        z *= decay
        z += inc @ drive
        if track or n == steps:
            norms[:, n] = np.sqrt((z * z) @ w)
        if record:
            coeffs[:, n] = z.reshape(state.z.shape)
    z = z.reshape(state.z.shape)
    times = dt * np.arange(steps + 1)
    if not track:
        return ZEnsemble(times[[0, -1]], norms[:, [0, -1]], np.full(paths, np.nan), z, spec, domain,
                         coeffs)
    return ZEnsemble(times, norms, norms.max(axis=1), z, spec, domain, coeffs)


# --------------------------------------------------------------- statistics

def mean_ci(samples: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """Sample mean and normal-approximation half width."""
    samples = np.asarray(samples, dtype=float)
    z = stats.norm.ppf(0.5 + level / 2)
    return float(samples.mean()), float(z * samples.std(ddof=1) / math.sqrt(samples.size))


def increment_moments(ensemble: ZEnsemble, pairs) -> dict:
    """E||xi_t - xi_r||_2^2 for (r, t) pairs of grid times, with CIs and a log-log slope.

    Returns a dict with 'rows' (r, t, mean, half_width) and the fitted slope
    of log-moment against log(t - r) with its 95% confidence interval.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two time pairs")
    xi = ensemble.xi_coeffs()
    times = ensemble.times
    rows = []
    for r, t in pairs:
        ir = int(np.argmin(np.abs(times - r)))
        it = int(np.argmin(np.abs(times - t)))
        diff = xi[:, it] - xi[:, ir]
        sq = np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
        m, hw = mean_ci(sq)
        rows.append((float(times[ir]), float(times[it]), m, hw))
    lags = np.array([t - r for r, t, _, _ in rows])
    means = np.array([m for _, _, m, _ in rows])
    use = (lags > 0) & (means > 0)
    slope = ci = (math.nan, math.nan)
    if use.sum() >= 3:
        fit = stats.linregress(np.log(lags[use]), np.log(means[use]))
        tq = stats.t.ppf(0.975, use.sum() - 2)
        slope = fit.slope
        ci = (fit.slope - tq * fit.stderr, fit.slope + tq * fit.stderr)
    elif use.sum() == 2:
        fit = stats.linregress(np.log(lags[use]), np.log(means[use]))
        slope, ci = fit.slope, (math.nan, math.nan)
    return {"rows": rows, "slope": slope, "slope_ci": ci}


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    lo, hi = proportion_confint(hits, n, alpha=1.0 - level, method="wilson")
    # statsmodels leaves ~1e-18 round-off at hits = 0 or n
    p = hits / n
    return float(min(lo, p)), float(max(hi, p))


def fit_tail_constant(sup_unit: np.ndarray, admissibility: float) -> float:
    """C_hat = E[sup ||Z^1||^2] / S(beta) from an eps = 1 ensemble (frozen afterwards)."""
    if len(sup_unit) == 0:
        raise ValueError("empty ensemble")
    return float(np.mean(np.asarray(sup_unit) ** 2) / admissibility)


def tail_probability(sup: np.ndarray, s_grid, eps: float, c_hat: float,
                     admissibility: float) -> list[dict]:
    """Empirical P(sup_t ||Z_t|| > s) with Wilson intervals and the frozen Markov bound."""
    sup = np.asarray(sup, dtype=float)
    if sup.size == 0:
        raise ValueError("empty ensemble")
    rows = []
    for s in s_grid:
        hits = int(np.sum(sup > s))
        lo, hi = wilson_interval(hits, sup.size)
        rows.append({"s": float(s), "n": int(sup.size), "hits": hits,
                     "p_hat": hits / sup.size, "ci_lo": lo, "ci_hi": hi,
                     "bound": eps / s**2 * c_hat * admissibility})
    return rows


TRAJECTORY_HEADER = ("t", "norm_Z_Hm2a", "norm_xi_L2", "sup_so_far")


def trajectory_rows(ensemble: ZEnsemble, path: int = 0):
    """Rows of the Z trajectory CSV for one path."""
    running = np.maximum.accumulate(ensemble.norms[path])
    for t, nz, sup in zip(ensemble.times, ensemble.norms[path], running):
        # ||xi||_2 equals ||Z||_{H^-2alpha} on the spectral scale
        yield (float(t), float(nz), float(nz), float(sup))
