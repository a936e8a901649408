"""Dirichlet-Laplacian eigenbasis arithmetic on the box (0, pi)^dim.

Scalar fields are stored as coefficients over the orthonormal sine basis

    phi_k(x) = prod_i sqrt(2/pi) sin(k_i x_i),   k_i = 1..N,

with eigenvalue mu_k = sum k_i^2.  Fractional powers, the heat semigroup and
the Sobolev-scale norms are diagonal in this basis.

Velocity fields (dim = 3) use the "free-slip" basis in which component i is
sine in x_i and cosine in the two other directions, indexed by wavevectors
k in {0..N-1}^3.  In that basis divergence, gradient and the Leray projector
are diagonal, the normal velocity vanishes on every face, and mu_k = |k|^2.

Products of fields are evaluated on midpoint grids x_j = (j + 1/2) pi / M,
where sines k = 1..M and cosines k = 0..M-1 are discretely orthogonal
(DST-II / DCT-II).  Choosing M > 3N/2 makes quadratic products alias free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft

SINE = "sine"
FREESLIP = "freeslip"


@dataclass(frozen=True)
class BoxDomain:
    """The box (0, pi)^dim with N modes per axis."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError(f"dim must be 1 or 3, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"need at least 4 modes per axis, got {self.n}")

    @property
    def mode_count(self) -> int:
        return self.n**self.dim

    @property
    def spacing(self) -> float:
        """Spacing of the interior collocation grid x_i = i pi / (N + 1)."""
        return math.pi / (self.n + 1)

    def wavenumbers(self, basis: str = SINE) -> np.ndarray:
        if basis == SINE:
            return np.arange(1, self.n + 1, dtype=float)
        if basis == FREESLIP:
            return np.arange(0, self.n, dtype=float)
        raise ValueError(f"unknown basis {basis!r}")

    def eigenvalues(self, basis: str = SINE) -> np.ndarray:
        """Array of mu_k = sum k_i^2 with shape (N,)*dim."""
        return _eigenvalues(self.dim, self.n, basis)

    def grid(self) -> np.ndarray:
        """Interior collocation points along one axis."""
        return self.spacing * np.arange(1, self.n + 1)

    def component_mask(self) -> np.ndarray:
        """Active coefficients of each free-slip component, shape (3, N, N, N)."""
        return _freeslip_mask(self.n)


_EIG_CACHE: dict = {}


def _eigenvalues(dim, n, basis):
    key = (dim, n, basis)
    if key not in _EIG_CACHE:
        k = np.arange(1, n + 1) if basis == SINE else np.arange(0, n)
        k2 = (k.astype(float)) ** 2
        mu = np.zeros((n,) * dim)
        for ax in range(dim):
            shape = [1] * dim
            shape[ax] = n
            mu = mu + k2.reshape(shape)
        mu.setflags(write=False)
        _EIG_CACHE[key] = mu
    return _EIG_CACHE[key]


_MASK_CACHE: dict = {}


def _freeslip_mask(n):
    if n not in _MASK_CACHE:
        mask = np.ones((3, n, n, n), dtype=bool)
        mask[0, 0, :, :] = False
        mask[1, :, 0, :] = False
        mask[2, :, :, 0] = False
        mask.setflags(write=False)
        _MASK_CACHE[n] = mask
    return _MASK_CACHE[n]


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of a scalar or vector field, shape (components, N, ..., N)."""

    domain: BoxDomain
    coeffs: np.ndarray
    basis: str = SINE
    divergence_free: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        expected = (self.domain.n,) * self.domain.dim
        if c.shape == expected:
            c = c[np.newaxis]
        if c.shape[1:] != expected:
            raise ValueError(f"coefficient shape {c.shape} does not match domain {expected}")
        if self.basis == FREESLIP and (self.domain.dim != 3 or c.shape[0] != 3):
            raise ValueError("free-slip fields are 3-component vectors on a 3D box")
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("non-finite spectral coefficients")
        object.__setattr__(self, "coeffs", c)

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.components == 1

    def eigenvalues(self) -> np.ndarray:
        return self.domain.eigenvalues(self.basis)

    def with_coeffs(self, coeffs, divergence_free=None) -> "SpectralField":
        flag = self.divergence_free if divergence_free is None else divergence_free
        return SpectralField(self.domain, coeffs, self.basis, flag)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs,
                                self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs,
                                self.divergence_free and other.divergence_free)

    def __mul__(self, scalar):
        return self.with_coeffs(float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs**2)))

    @classmethod
    def zeros(cls, domain: BoxDomain, components: int = 1, basis: str = SINE):
        shape = (components,) + (domain.n,) * domain.dim
        return cls(domain, np.zeros(shape), basis, divergence_free=(basis == FREESLIP))

    @classmethod
    def unit_mode(cls, domain: BoxDomain, index: Sequence[int], component: int = 0,
                  components: int = 1, basis: str = SINE):
        """Field with coefficient 1 on the mode with wavenumbers ``index``."""
        c = np.zeros((components,) + (domain.n,) * domain.dim)
        offset = 1 if basis == SINE else 0
        pos = tuple(int(k) - offset for k in index)
        c[(component,) + pos] = 1.0
        return cls(domain, c, basis)


def _check_compatible(a: SpectralField, b: SpectralField):
    if a.domain != b.domain or a.basis != b.basis or a.coeffs.shape != b.coeffs.shape:
        raise ValueError("fields live on different domains, bases or component counts")


@dataclass(frozen=True)
class ExponentPack:
    """Exponents shared by the temperature and velocity estimates.

    alpha and beta are derived from delta; the constructor rejects packs that
    violate the Picard contraction condition for the remainder temperature.
    """

    delta: float = 0.05
    s: float = 0.1
    p: float = 4.0
    gamma: float = 0.26
    lam: float = 0.5
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.delta < 0.25:
            raise ValueError(f"delta must lie in (0, 1/4), got {self.delta}")
        if not 0.0 <= self.s < 0.5:
            raise ValueError(f"s must lie in [0, 1/2), got {self.s}")
        if not self.p > 2.0 / (1.0 - self.delta):
            raise ValueError(f"p must exceed 2/(1-delta) = {2 / (1 - self.delta):.4f}")
        if not self.gamma > 0.25:
            raise ValueError(f"gamma must exceed 1/4, got {self.gamma}")
        if not 0.0 < self.lam < 1.0 - self.delta:
            raise ValueError(f"lambda must lie in (0, 1-delta), got {self.lam}")
        object.__setattr__(self, "alpha", 0.25 + self.delta / 2.0)
        object.__setattr__(self, "beta", 0.25 - self.delta / 4.0)
        if not self.contraction_index < 1.0:
            raise ValueError(
                f"contraction condition fails: index {self.contraction_index:.4f} >= 1")

    @property
    def contraction_index(self) -> float:
        """(gamma + s/2 + 1/2) / (1 - lambda/p - delta/p)."""
        return (self.gamma + self.s / 2 + 0.5) / (1.0 - self.lam / self.p - self.delta / self.p)

    @property
    def vp_exponent(self) -> float:
        """Order of the spectral surrogate for the initial-velocity trace space."""
        return 1.5 - self.delta - 2.0 / self.p

    @property
    def time_exponent(self) -> float:
        """The time integrability p / (lambda + delta) of the interpolated velocity norm."""
        return self.p / (self.lam + self.delta)


# ---------------------------------------------------------------- transforms

def sine_transform(grid_values: np.ndarray, domain: BoxDomain) -> SpectralField:
    """Grid values on x_i = i pi/(N+1) to sine coefficients (DST-I).

    The transform is orthogonal up to the factor h^(dim/2), so
    sum(coeffs**2) == h^dim * sum(values**2) exactly.
    """
    v = np.asarray(grid_values, dtype=float)
    expected = (domain.n,) * domain.dim
    if v.shape == expected:
        v = v[np.newaxis]
    if v.shape[1:] != expected:
        raise ValueError(f"grid shape {v.shape} does not match domain {expected}")
    axes = tuple(range(1, domain.dim + 1))
    c = sfft.dstn(v, type=1, axes=axes, norm="ortho") * domain.spacing ** (domain.dim / 2)
    return SpectralField(domain, c)


def inverse_sine_transform(f: SpectralField) -> np.ndarray:
    """Sine coefficients back to grid values, shape (components, N, ..., N)."""
    if f.basis != SINE:
        raise ValueError("inverse_sine_transform needs a sine-basis field")
    axes = tuple(range(1, f.domain.dim + 1))
    return sfft.idstn(f.coeffs / f.domain.spacing ** (f.domain.dim / 2),
                      type=1, axes=axes, norm="ortho")


def _power(mu, a, mask=None):
    out = np.zeros_like(mu)
    pos = mu > 0
    out[pos] = mu[pos] ** a
    if a == 0:
        out[~pos] = 1.0
    return out


def apply_fractional_power(f: SpectralField, a: float) -> SpectralField:
    """Multiply the coefficient of mode k by mu_k^a (any real a)."""
    if a == 0:
        return f
    return f.with_coeffs(f.coeffs * _power(f.eigenvalues(), a))


def heat_semigroup(f: SpectralField, t: float) -> SpectralField:
    """exp(t Delta) f, i.e. mode k damped by exp(-mu_k t)."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return f.with_coeffs(f.coeffs * np.exp(-f.eigenvalues() * t))


def grid_values(f: SpectralField) -> tuple[np.ndarray, float]:
    """Point values and the per-point quadrature weight.

    Sine fields use the DST-I collocation grid; free-slip vector fields use
    the N-point midpoint grid.  Both make Parseval exact.
    """
    if f.basis == SINE:
        return inverse_sine_transform(f), f.domain.spacing**f.domain.dim
    grid = ProductGrid(f.domain.n, f.domain.n)
    vals = np.stack([grid.synth(f.coeffs[i], FREESLIP_KINDS[i]) for i in range(3)])
    return vals, grid.weight


def sobolev_norm(f: SpectralField, s: float, q: float = 2.0) -> float:
    """Norm of Delta^(s/2) f in L^q, for q in {2, 6/5}.

    q = 2 is evaluated spectrally as (sum mu_k^s c_k^2)^(1/2); q = 6/5 by grid
    quadrature of |Delta^(s/2) f|^(6/5).  Vector fields use the Euclidean
    magnitude pointwise.
    """
    if q == 2:
        return float(np.sqrt(np.sum(_power(f.eigenvalues(), s) * f.coeffs**2)))
    if abs(q - 1.2) < 1e-12:
        vals, w = grid_values(apply_fractional_power(f, s / 2.0))
        mag = np.sqrt(np.sum(vals**2, axis=0)) if vals.shape[0] > 1 else np.abs(vals[0])
        return float((w * np.sum(mag**q)) ** (1.0 / q))
    raise ValueError(f"unsupported integrability exponent q={q}; use 2 or 6/5")


def sobolev_norms(coeffs: np.ndarray, mu: np.ndarray, s: float) -> np.ndarray:
    """Spectral H^s norms of a stack of coefficient arrays (leading axis = time)."""
    w = _power(mu, s)
    axes = tuple(range(1, coeffs.ndim))
    return np.sqrt(np.sum(w * coeffs**2, axis=axes))


# ------------------------------------------------------------ product grids

FREESLIP_KINDS = (("s", "c", "c"), ("c", "s", "c"), ("c", "c", "s"))


def dealiased_size(n: int) -> int:
    """Smallest midpoint grid making products of two n-mode fields alias free."""
    return (3 * n) // 2 + 1


class ProductGrid:
    """Evaluation and projection on a midpoint grid of M points per axis.

    Each axis of a coefficient array carries an explicit integer wavenumber
    list and a kind, 's' (sqrt(2/pi) sin kx) or 'c' (sqrt(2/pi) cos kx, and
    1/sqrt(pi) for k = 0).  Wavenumber lists are contiguous ranges below M.
    """

    def __init__(self, n: int, m: int | None = None):
        self.n = n
        self.m = n + 1 if m is None else m
        self.h = math.pi / self.m
        self.points = (np.arange(self.m) + 0.5) * self.h

    @property
    def weight(self):
        return self.h**3

    def _pad(self, arr, axis, kind, k):
        src, dst = _slots(k, kind)
        shape = list(arr.shape)
        shape[axis] = self.m
        out = np.zeros(shape)
        lead = (slice(None),) * axis
        out[lead + (dst,)] = arr[lead + (src,)]
        return out

    def _trim(self, arr, axis, kind, k):
        src, dst = _slots(k, kind)
        lead = (slice(None),) * axis
        if kind == "s" and k[0] == 0:
            shape = list(arr.shape)
            shape[axis] = len(k)
            res = np.zeros(shape)
            res[lead + (src,)] = arr[lead + (dst,)]
            return res
        return arr[lead + (dst,)]

    def _ks(self, ks, ndim):
        if ks is None:
            ks = [np.arange(self.n)] * ndim
        ks = [np.asarray(k, dtype=int) for k in ks]
        if max(int(k.max()) for k in ks) >= self.m:
            raise ValueError(f"wavenumbers reach {max(int(k.max()) for k in ks)}, grid has M={self.m}")
        return ks

    def synth(self, coeffs: np.ndarray, kinds: Sequence[str], ks=None, lead: int = 0) -> np.ndarray:
        """Evaluate a coefficient array on the grid.

        ``ks`` defaults to wavenumbers 0..n-1 on every axis; ``lead`` counts
        leading batch axes that are not transformed.
        """
        ks = self._ks(ks, len(kinds))
        out = coeffs
        for ax, kind in enumerate(kinds):
            axis = lead + ax
            out = self._pad(out, axis, kind, ks[ax])
            if kind == "s":
                out = sfft.idst(out, type=2, axis=axis, norm="ortho")
            else:
                out = sfft.idct(out, type=2, axis=axis, norm="ortho")
        return out / self.h ** (len(kinds) / 2)

    def analyze(self, values: np.ndarray, kinds: Sequence[str], ks=None, lead: int = 0) -> np.ndarray:
        """Project grid values onto the listed modes (exact for band-limited data)."""
        ks = self._ks(ks, len(kinds))
        out = values
        for ax, kind in enumerate(kinds):
            axis = lead + ax
            if kind == "s":
                out = sfft.dst(out, type=2, axis=axis, norm="ortho")
            else:
                out = sfft.dct(out, type=2, axis=axis, norm="ortho")
            out = self._trim(out, axis, kind, ks[ax])
        return out * self.h ** (len(kinds) / 2)


def _slots(k, kind):
    """(source, destination) indexers mapping wavenumbers k to transform slots."""
    key = (kind, int(k[0]), len(k))
    if key not in _SLOT_CACHE:
        if not np.array_equal(k, np.arange(k[0], k[0] + len(k))):
            raise ValueError("wavenumber lists must be contiguous ranges")
        first = int(k[0])
        if kind == "s":
            skip = 1 if first == 0 else 0
            src = slice(skip, len(k))
            dst = slice(first + skip - 1, first + len(k) - 1)
        else:
            src = slice(0, len(k))
            dst = slice(first, first + len(k))
        _SLOT_CACHE[key] = (src, dst)
    return _SLOT_CACHE[key]


_SLOT_CACHE: dict = {}


def differentiate_axis(coeffs: np.ndarray, kinds: Sequence[str], ks, axis: int, lead: int = 0):
    """Spectral d/dx_axis: returns (coefficients, kinds) of the derivative."""
    k = np.asarray(ks[axis], dtype=float)
    shape = [1] * coeffs.ndim
    shape[lead + axis] = len(k)
    kinds = list(kinds)
    if kinds[axis] == "s":
        kinds[axis] = "c"
        return coeffs * k.reshape(shape), tuple(kinds)
    kinds[axis] = "s"
    return coeffs * (-k).reshape(shape), tuple(kinds)


# -------------------------------------------------------------- trajectories

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Coefficients on a uniform time grid, shape (nt, components, *modes)."""

    times: np.ndarray
    coeffs: np.ndarray
    domain: BoxDomain
    basis: str = SINE

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        modes = (self.domain.n,) * self.domain.dim
        if c.shape[1:] == modes:
            c = c[:, np.newaxis]
        if c.shape[0] != len(self.times) or c.shape[2:] != modes:
            raise ValueError(f"trajectory shape {c.shape} does not match {len(self.times)} "
                             f"times and modes {modes}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)

    def at(self, i: int) -> SpectralField:
        return SpectralField(self.domain, self.coeffs[i], self.basis)

    def with_coeffs(self, coeffs) -> "Trajectory":
        return Trajectory(self.times, coeffs, self.domain, self.basis)

    def truncate(self, steps: int) -> "Trajectory":
        """The first ``steps`` + 1 time points."""
        return Trajectory(self.times[: steps + 1], self.coeffs[: steps + 1], self.domain, self.basis)

    def norms(self, s: float) -> np.ndarray:
        """Spectral H^s norm at every time."""
        return sobolev_norms(self.coeffs, self.domain.eigenvalues(self.basis), s)

    def sup_norm(self, s: float) -> float:
        return float(self.norms(s).max())

    @classmethod
    def zeros(cls, times, domain: BoxDomain, components: int = 1, basis: str = SINE):
        times = np.asarray(times, dtype=float)
        return cls(times, np.zeros((len(times), components) + (domain.n,) * domain.dim),
                   domain, basis)

    def check_grid(self, other: "Trajectory"):
        if len(self.times) != len(other.times) or not np.allclose(self.times, other.times):
            raise ValueError("trajectories live on different time grids")


def time_lp_norm(values: np.ndarray, times: np.ndarray, p: float) -> float:
    """L^p(0, T) norm of sampled nonnegative values by the trapezoid rule."""
    values = np.asarray(values, dtype=float)
    if len(values) == 1:
        return 0.0
    return float(np.trapezoid(np.abs(values) ** p, times) ** (1.0 / p))


def phi1(mu: np.ndarray, dt: float) -> np.ndarray:
    """(1 - exp(-mu dt)) / mu, with the limit dt at mu = 0."""
    out = np.full_like(mu, dt, dtype=float)
    pos = mu > 0
    out[pos] = -np.expm1(-mu[pos] * dt) / mu[pos]
    return out


def sobolev_norms_q(coeffs: np.ndarray, domain: BoxDomain, s: float, q: float = 1.2) -> np.ndarray:
    """Batched ||Delta^(s/2) f||_{L^q} for sine-basis scalars, shape (batch, N, ..., N)."""
    axes = tuple(range(coeffs.ndim - domain.dim, coeffs.ndim))
    scaled = coeffs * _power(domain.eigenvalues(SINE), s / 2.0) / domain.spacing ** (domain.dim / 2)
    vals = sfft.idstn(scaled, type=1, axes=axes, norm="ortho")
    w = domain.spacing**domain.dim
    return (w * np.sum(np.abs(vals) ** q, axis=axes)) ** (1.0 / q)
