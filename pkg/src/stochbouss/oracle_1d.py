"""Closed forms on (0, pi) for the boundary-noise convolution.

With endpoint noise of intensities (lam_L, lam_R) the interior coefficients
of the Dirichlet map are d_n = sqrt(2/pi)/n (left) and sqrt(2/pi)(-1)^(n+1)/n
(right), so the Ito isometry gives, mode by mode,

    E||Z_t||^2_{H^-2alpha} = (eps/2) sum_n mu_n^{1-2alpha} (lam_L^2 + lam_R^2) d_n^2 (1 - e^{-2 mu_n t}),

with mu_n = n^2.  The terms behave like n^{-4 alpha}; divergence is decided by
limit comparison with the harmonic series, never by a magnitude cutoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .boundary_noise import BoundaryBasis, BoundaryNoiseSpec, admissibility_series
from .spectral_core import BoxDomain, ExponentPack
from .stochastic_convolution import mean_ci, simulate_Z

ORACLE_HEADER = ("alpha", "t", "closed_form", "mc_estimate", "rel_err", "verdict")


def classify_series(terms: np.ndarray, slack: float = 1e-9) -> str:
    """'bounded', 'log-divergent' or 'power-divergent' from the tail of positive terms.

    Compares n a_n at the last index N against N/2: decreasing means faster
    than harmonic decay, constant means harmonic, increasing means slower.
    """
    terms = np.asarray(terms, dtype=float)
    n = len(terms)
    if n < 4:
        raise ValueError("need at least 4 terms")
    ratio = (n * terms[n - 1]) / ((n // 2) * terms[n // 2 - 1])
    if ratio < 1 - slack:
        return "bounded"
    if ratio <= 1 + slack:
        return "log-divergent"
    return "power-divergent"


def _moment_terms(n, t, alpha, eps, lam):
    mu = n * n
    return 0.5 * eps * (lam[0] ** 2 + lam[1] ** 2) * (2.0 / math.pi) * mu ** (1 - 2 * alpha) / mu \
        * -np.expm1(-2.0 * mu * t)


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    n_terms: int


def closed_form_Z_second_moment(t: float, alpha: float, eps: float = 1.0, n_terms: int = 10**6,
                                lam=(1.0, 0.0), tail: bool = False) -> float:
    """E||Z_t||^2_{H^-2alpha}; math.inf when the series diverges.

    ``n_terms`` truncates the series (pass the simulator's mode count to get
    the truncated oracle).  ``tail=True`` adds the Hurwitz-zeta tail, giving
    the untruncated value up to terms of size e^{-2 n_terms^2 t}.
    """
    return closed_form_series(t, alpha, eps, n_terms, lam, tail).value


def closed_form_series(t: float, alpha: float, eps: float = 1.0, n_terms: int = 10**6,
                       lam=(1.0, 0.0), tail: bool = False) -> SeriesValue:
    """The truncated series with a rigorous bound on the omitted tail."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return SeriesValue(0.0, 0.0, n_terms)
    n = np.arange(1, n_terms + 1, dtype=float)
    terms = _moment_terms(n, t, alpha, eps, lam)
    c = 0.5 * eps * (lam[0] ** 2 + lam[1] ** 2) * (2.0 / math.pi)
    if 4 * alpha <= 1:
        if classify_series(terms) == "bounded":
            raise AssertionError("comparison test disagrees with the exponent test")
        return SeriesValue(math.inf, math.inf, n_terms)
    partial = float(np.sum(terms))
    # sum_{n > N} n^{-4 alpha} <= N^{1 - 4 alpha} / (4 alpha - 1)
    bound = c * n_terms ** (1 - 4 * alpha) / (4 * alpha - 1)
    if tail:
        exact_tail = c * float(zeta(4 * alpha, n_terms + 1))
        return SeriesValue(partial + exact_tail, 0.0, n_terms)
    return SeriesValue(partial, bound, n_terms)


def closed_form_increment_moment(r: float, t: float, alpha: float, eps: float, n_modes: int,
                                 lam=(1.0, 0.0)) -> float:
    """E||xi_t - xi_r||^2_2 for Z started at 0, xi = Delta^-alpha Z, first n_modes modes."""
    if not 0 <= r <= t:
        raise ValueError("need 0 <= r <= t")
    n = np.arange(1, n_modes + 1, dtype=float)
    mu = n * n
    d2 = (lam[0] ** 2 + lam[1] ** 2) * (2.0 / math.pi) / mu
    sigma2 = 0.5 * eps * mu * d2  # stationary variance of z_n
    lag = t - r
    per = sigma2 * (np.expm1(-mu * lag) ** 2 * -np.expm1(-2 * mu * r) - np.expm1(-2 * mu * lag))
    return float(np.sum(mu ** (-2 * alpha) * per))


def dirichlet_map_coefficients(n_modes: int) -> tuple[np.ndarray, np.ndarray]:
    """d_n for the left and right endpoint atoms."""
    n = np.arange(1, n_modes + 1, dtype=float)
    return math.sqrt(2 / math.pi) / n, math.sqrt(2 / math.pi) * (-1.0) ** (n + 1) / n


def admissibility_verdicts(betas=(0.2, 0.25, 0.3), k: int = 2**16) -> dict:
    """Classification of ||Delta^beta D e_left||^2 partial sums for each beta."""
    spec = BoundaryNoiseSpec(BoundaryBasis(1), "constant", 1.0)
    out = {}
    for beta in betas:
        partial = admissibility_series(spec, beta, k)
        terms = np.diff(partial, prepend=0.0)
        out[beta] = {"verdict": classify_series(terms),
                     "partials": {kk: float(partial[kk - 1]) for kk in (k // 4, k // 2, k)}}
    return out


@dataclass(frozen=True)
class Oracle1DConfig:
    n_modes: int = 512
    eps: float = 1.0
    t_list: tuple = (0.1, 0.5, 1.0)
    alpha_ok: float = 0.3
    alpha_bad: float = 0.2
    paths: int = 2000
    steps: int = 2048
    seed: int = 20240601
    rel_tol: float = 0.02
    growth: float = 0.10
    scheme: str = "exact_variance"
    n_terms: int = 10**6

    def __post_init__(self):
        if self.paths < 2 or self.steps < 1 or self.n_modes < 8:
            raise ValueError("oracle needs paths >= 2, steps >= 1 and at least 8 modes")


def _spec(eps):
    return BoundaryNoiseSpec(BoundaryBasis(1), "constant", 1.0, eps=eps, exponents=ExponentPack())


def truncated_moments(final: np.ndarray, alpha: float, sizes) -> dict:
    """Monte Carlo E||Z_t||^2_{H^-2alpha} restricted to the first N modes, for each N in sizes."""
    n = np.arange(1, final.shape[-1] + 1, dtype=float)
    w = n ** (-4 * alpha)
    out = {}
    for size in sizes:
        sq = np.sum(w[:size] * final[:, :size] ** 2, axis=1)
        out[size] = mean_ci(sq)
    return out


def validate_simulator_against_oracle(config: Oracle1DConfig = Oracle1DConfig()) -> list[dict]:
    """Monte Carlo against the truncated series; divergence witness at the bad alpha."""
    rng = np.random.default_rng(config.seed)
    spec = _spec(config.eps)
    dom = BoxDomain(1, config.n_modes)
    lam = (1.0, 1.0)
    rows = []
    for t in config.t_list:
        ens = simulate_Z(spec, dom, t, t / config.steps, rng, paths=config.paths,
                         scheme=config.scheme, alpha=config.alpha_ok, track=False)
        est, hw = mean_ci(ens.norms[:, -1] ** 2)
        cf = closed_form_Z_second_moment(t, config.alpha_ok, config.eps, config.n_modes, lam)
        rel = abs(est - cf) / cf
        ok = abs(est - cf) <= config.rel_tol * cf + hw
        rows.append({"alpha": config.alpha_ok, "t": t, "closed_form": cf, "mc_estimate": est,
                     "rel_err": rel, "verdict": "pass" if ok else "fail", "half_width": hw})
    t = config.t_list[len(config.t_list) // 2]
    ens = simulate_Z(spec, dom, t, t / config.steps, rng, paths=config.paths, scheme=config.scheme,
                     alpha=config.alpha_bad, track=False)
    sizes = [config.n_modes // 8, config.n_modes // 4, config.n_modes // 2, config.n_modes]
    mom = truncated_moments(ens.final, config.alpha_bad, sizes)
    growth = [mom[b][0] / mom[a][0] - 1 for a, b in zip(sizes, sizes[1:])]
    cf = closed_form_Z_second_moment(t, config.alpha_bad, config.eps, config.n_terms, lam)
    ok = all(g > config.growth for g in growth) and math.isinf(cf)
    rows.append({"alpha": config.alpha_bad, "t": t, "closed_form": cf,
                 "mc_estimate": mom[config.n_modes][0], "rel_err": math.nan,
                 "verdict": "pass" if ok else "fail", "growth": growth})
    return rows
