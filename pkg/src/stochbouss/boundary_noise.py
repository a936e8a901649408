"""Q-Wiener noise on the boundary of the box and the Dirichlet (harmonic-extension) map.

In 1D the boundary space is R^2 (the two endpoint values) and the harmonic
extension of (a, b) is a (1 - x/pi) + b x/pi.  In 3D each face carries the
tensor sines (2/pi) sin(m s) sin(n t); the harmonic extension of a face mode
on {x_a = 0} is separable and its interior sine coefficients are analytic:

    <D e, phi_(m, n, l)> = sqrt(2/pi) * l / (m^2 + n^2 + l^2),

with an extra factor (-1)^(l+1) for the opposite face {x_a = pi}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .spectral_core import BoxDomain, ExponentPack, SpectralField

SQ2PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class BoundaryBasis:
    """Orthonormal basis of L^2 of the boundary, in rank order.

    1D: the atoms {left, right}.  3D: faces in the order
    (x=0, x=pi, y=0, y=pi, z=0, z=pi), each with the modes (m, n), 1 <= m, n <= K,
    sorted by m^2 + n^2 (ties by m).
    """

    dim: int
    k: int = 1

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError(f"boundary basis needs dim 1 or 3, got {self.dim}")
        if self.dim == 3 and self.k < 1:
            raise ValueError("face truncation K must be >= 1")

    @property
    def size(self) -> int:
        return 2 if self.dim == 1 else 6 * self.k * self.k

    @cached_property
    def face_modes(self) -> np.ndarray:
        """(K^2, 2) array of (m, n) in per-face rank order (3D only)."""
        m, n = np.meshgrid(np.arange(1, self.k + 1), np.arange(1, self.k + 1), indexing="ij")
        m, n = m.ravel(), n.ravel()
        order = np.lexsort((m, m * m + n * n))
        return np.stack([m[order], n[order]], axis=1)

    def enumerate(self) -> list[tuple]:
        if self.dim == 1:
            return [("left",), ("right",)]
        return [(face, int(m), int(n)) for face in range(6) for m, n in self.face_modes]

    def to_faces(self, h: np.ndarray) -> np.ndarray:
        """Rank-ordered coefficients (..., size) to face arrays (..., 6, K, K)."""
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape[:-1] + (6, self.k, self.k))
        fm = self.face_modes
        hh = h.reshape(h.shape[:-1] + (6, self.k * self.k))
        out[..., fm[:, 0] - 1, fm[:, 1] - 1] = hh
        return out

    def from_faces(self, faces: np.ndarray) -> np.ndarray:
        fm = self.face_modes
        vals = faces[..., fm[:, 0] - 1, fm[:, 1] - 1]
        return vals.reshape(faces.shape[:-3] + (self.size,))


@dataclass(frozen=True)
class BoundaryNoiseSpec:
    """Covariance eigenvalues, noise intensity and exponents of the boundary noise.

    ``kind`` is 'constant' (lambda_k = c) or 'power' (lambda_k = c * rank^-r).
    """

    basis: BoundaryBasis
    kind: str = "constant"
    c: float = 1.0
    r: float = 0.0
    eps: float = 1.0
    exponents: ExponentPack = field(default_factory=ExponentPack)

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ValueError(f"noise.kind must be 'constant' or 'power', got {self.kind!r}")
        if self.c < 0:
            raise ValueError("noise.c must be nonnegative")
        if self.kind == "power" and self.r < 0:
            raise ValueError("noise.r must be nonnegative")
        if self.eps <= 0:
            raise ValueError("noise.eps must be positive")

    @cached_property
    def lambdas(self) -> np.ndarray:
        rank = np.arange(1, self.basis.size + 1, dtype=float)
        if self.kind == "constant":
            return np.full(self.basis.size, float(self.c))
        return self.c * rank ** (-self.r)


def dirichlet_coefficients(h: np.ndarray, basis: BoundaryBasis, domain: BoxDomain) -> np.ndarray:
    """Interior sine coefficients of D h for a batch h of shape (..., basis.size)."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1:] != (basis.size,):
        raise ValueError(f"boundary data has {h.shape[-1:]} entries, basis has {basis.size}")
    if basis.dim != domain.dim:
        raise ValueError("boundary basis and interior domain have different dimensions")
    n = domain.n
    l = np.arange(1, n + 1, dtype=float)
    if domain.dim == 1:
        left = SQ2PI / l
        right = SQ2PI * (-1.0) ** (l + 1) / l
        return h[..., :1] * left + h[..., 1:2] * right

    faces = basis.to_faces(h)
    kk = min(basis.k, n)
    tang = np.zeros(h.shape[:-1] + (6, n, n))
    tang[..., :kk, :kk] = faces[..., :kk, :kk]
    mu = domain.eigenvalues()
    sign = (-1.0) ** (l + 1)
    out = np.zeros(h.shape[:-1] + (n, n, n))
    for axis in range(3):
        prof = (l / 1.0).reshape([n if a == axis else 1 for a in range(3)])
        sgn = sign.reshape(prof.shape)
        for side, factor in ((0, 1.0), (1, sgn)):
            # tangential indices run over the two remaining axes in increasing order
            t = np.expand_dims(tang[..., 2 * axis + side, :, :], axis=-3 + axis)
            out = out + SQ2PI * t * factor * prof / mu
    return out


def dirichlet_map(h, basis: BoundaryBasis, domain: BoxDomain) -> SpectralField:
    """Harmonic extension of boundary data ``h`` as a sine-basis field."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 1:
        raise ValueError("dirichlet_map takes one boundary datum; use dirichlet_coefficients for batches")
    return SpectralField(domain, dirichlet_coefficients(h, basis, domain))


def projection_matrix(basis: BoundaryBasis, domain: BoxDomain) -> np.ndarray:
    """Dense d_jk = <D e_k, phi_j>, shape (N^dim, basis.size)."""
    eye = np.eye(basis.size)
    cols = dirichlet_coefficients(eye, basis, domain)
    return cols.reshape(basis.size, -1).T


def _face_extension_norms(basis: BoundaryBasis, beta: float, n_interior: int) -> np.ndarray:
    """||Delta^beta D e_k||^2 for every face mode, summed over l <= n_interior."""
    fm = basis.face_modes
    kappa2 = (fm[:, 0] ** 2 + fm[:, 1] ** 2).astype(float)
    l = np.arange(1, n_interior + 1, dtype=float)
    per_mode = np.array([
        np.sum((2.0 / math.pi) * l**2 * (k2 + l**2) ** (2.0 * beta - 2.0)) for k2 in kappa2
    ])
    return np.tile(per_mode, 6)


def admissibility_series(spec: BoundaryNoiseSpec, beta: float, k: int,
                         n_interior: int = 4096) -> np.ndarray:
    """Partial sums of sum_k lambda_k^2 ||Delta^beta D e_k||_2^2.

    1D: the boundary basis has two atoms, so the partial sums run over the
    interior spectral cutoff n = 1..k.  3D: they run over boundary ranks
    1..k, each term summed spectrally up to ``n_interior`` interior modes.
    """
    lam2 = spec.lambdas**2
    if spec.basis.dim == 1:
        n = np.arange(1, k + 1, dtype=float)
        # |d_n,left| = |d_n,right| = sqrt(2/pi)/n
        terms = (lam2[0] + lam2[1]) * (2.0 / math.pi) * n ** (4.0 * beta - 2.0)
        return np.cumsum(terms)
    if k > spec.basis.size:
        raise ValueError(f"k={k} exceeds the boundary basis size {spec.basis.size}")
    norms = _face_extension_norms(spec.basis, beta, n_interior)
    return np.cumsum(lam2[:k] * norms[:k])


def admissibility_total(spec: BoundaryNoiseSpec, beta: float | None = None,
                        n_interior: int | None = None) -> float:
    """S(beta) for the configured noise (1D: exact zeta value; 3D: truncated)."""
    from scipy.special import zeta

    beta = spec.exponents.beta if beta is None else beta
    lam2 = spec.lambdas**2
    if spec.basis.dim == 1:
        if n_interior is not None:
            return float(admissibility_series(spec, beta, n_interior)[-1])
        if 2.0 - 4.0 * beta <= 1.0:
            return math.inf
        return float((lam2[0] + lam2[1]) * (2.0 / math.pi) * zeta(2.0 - 4.0 * beta))
    return float(admissibility_series(spec, beta, spec.basis.size, n_interior or 4096)[-1])


def sample_boundary_increment(spec: BoundaryNoiseSpec, dt: float, rng: np.random.Generator,
                              size=None) -> np.ndarray:
    """lambda_k * (beta_k(t + dt) - beta_k(t)) for every boundary mode.

    ``size`` prepends batch dimensions (e.g. the number of paths).
    """
    if not dt > 0:
        raise ValueError(f"increment needs dt > 0, got {dt}")
    shape = (spec.basis.size,) if size is None else tuple(np.atleast_1d(size)) + (spec.basis.size,)
    return spec.lambdas * math.sqrt(dt) * rng.standard_normal(shape)
