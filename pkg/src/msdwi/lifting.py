"""Structured lifting of k-space grids and singular value thresholding.

A complex image I whose phase factor P has a spatially smooth (spectrally
concentrated) structure satisfies P * conj(I) = conj(P) * I pointwise, which
in k-space becomes an annihilation identity: convolving the spectrum of I
against the small phase spectrum, restricted to a disk support, gives zero.
Collecting that identity at every valid output coordinate yields a real
block matrix that is rank-deficient exactly when the phase spectrum fits
inside the support. Thresholding its singular values therefore projects a
shot image toward the smooth-phase set.

Layout of the lifted matrix (2*N_R rows, 2*|V| columns): with
S+(e,f) = K(x_e - p_f, y_e - q_f), S-(e,f) = K(-x_e - p_f, -y_e - q_f),
d = S+ - S-, s = S+ + S-, row f holds [d_real | -s_imag] and row N_R + f
holds [d_imag | s_real]. The stacked vector [Re; Im] of the phase spectrum
sampled at the negated support points is then a left null vector (see
:func:`phase_support_vector`). Valid coordinates e run row-major over the
rectangle of (x, y) whose every read stays on the grid; coordinates whose
negation falls off the grid are excluded rather than zero-padded, since
zero-padding breaks the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .operators import dft_centered, idft_centered

__all__ = [
    "SupportRegion",
    "LiftedMatrix",
    "support_points",
    "lift",
    "unlift",
    "svt",
    "lowrank_project",
    "phase_support_vector",
]


@dataclass(frozen=True)
class SupportRegion:
    """Disk of integer k-space offsets p^2 + q^2 <= radius^2, DC included."""

    radius: int
    points: np.ndarray  # (N_R, 2) int offsets, lexicographically sorted

    @property
    def size(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LiftedMatrix:
    """Lifted representation of one k-space grid.

    ``matrix`` is the 2*N_R x 2*|V| real block matrix described in the
    module docstring. ``leftover`` carries the k-space cells that no matrix
    entry reads (corner notches of the disk dilation, and on even grids the
    most-negative row/column whose negation is off-grid); keeping them makes
    unlift(lift(x)) = x exact and lets the low-rank projection pass
    unmodeled cells through untouched.
    """

    matrix: np.ndarray
    radius: int
    grid_shape: tuple[int, int]
    leftover: np.ndarray

    @property
    def n_valid(self) -> int:
        return self.matrix.shape[1] // 2


def support_points(radius: int) -> SupportRegion:
    """Integer offsets inside the closed disk of the given radius.

    The set is symmetric under negation and always contains the DC offset
    (0, 0). radius=1 gives the 5-point cross; radius=2 gives 13 points.
    """
    if not float(radius).is_integer() or radius < 0:
        raise ValueError(f"support radius must be a nonnegative integer, got {radius}")
    radius = int(radius)
    pts = [
        (p, q)
        for p in range(-radius, radius + 1)
        for q in range(-radius, radius + 1)
        if p * p + q * q <= radius * radius
    ]
    arr = np.array(sorted(pts), dtype=np.int64)
    arr.setflags(write=False)
    return SupportRegion(radius=radius, points=arr)


def _valid_range(n: int, radius: int) -> tuple[int, int]:
    # centered coordinates lo..hi; (x - p) and (-x - p) must stay in range
    # for every |p| <= radius
    lo, hi = -(n // 2), n - 1 - n // 2
    return max(lo + radius, -hi + radius), min(hi - radius, -lo - radius)


@lru_cache(maxsize=64)
def _plan(N: int, M: int, radius: int):
    region = support_points(radius)
    vx0, vx1 = _valid_range(N, radius)
    vy0, vy1 = _valid_range(M, radius)
    if vx0 > vx1 or vy0 > vy1:
        raise ValueError(
            f"support radius {radius} leaves no valid coordinates on a {N}x{M} grid"
        )
    cN, cM = N // 2, M // 2
    slices = []
    for p, q in region.points:
        plus = (
            slice(vx0 - p + cN, vx1 - p + cN + 1),
            slice(vy0 - q + cM, vy1 - q + cM + 1),
        )
        minus = (
            slice(-vx1 - p + cN, -vx0 - p + cN + 1),
            slice(-vy1 - q + cM, -vy0 - q + cM + 1),
        )
        slices.append((plus, minus))
    multiplicity = np.zeros((N, M))
    for plus, minus in slices:
        multiplicity[plus] += 2.0
        multiplicity[minus] += 2.0
    covered = multiplicity > 0
    multiplicity[~covered] = 1.0  # avoid 0/0; leftover cells are restored anyway
    multiplicity.setflags(write=False)
    covered.setflags(write=False)
    return region, tuple(slices), (vx1 - vx0 + 1) * (vy1 - vy0 + 1), multiplicity, covered


def lift(ktilde: np.ndarray, region: SupportRegion) -> LiftedMatrix:
    """Build the lifted block matrix of a centered k-space grid.

    Args:
        ktilde: complex (N, M) k-space grid with DC at (N//2, M//2).
        region: disk support of the assumed phase spectrum.

    Returns:
        LiftedMatrix of shape (2*N_R, 2*|V|).
    """
    ktilde = np.asarray(ktilde, dtype=np.complex128)
    if ktilde.ndim != 2:
        raise ValueError(f"expected a 2-D k-space grid, got shape {ktilde.shape}")
    N, M = ktilde.shape
    _, slices, n_valid, _, covered = _plan(N, M, region.radius)
    n_r = region.size
    L = np.empty((2 * n_r, 2 * n_valid))
    for f, (plus, minus) in enumerate(slices):
        sp = ktilde[plus]
        sm = ktilde[minus][::-1, ::-1]
        diff = sp - sm
        tot = sp + sm
        L[f, :n_valid] = diff.real.ravel()
        L[f, n_valid:] = -tot.imag.ravel()
        L[n_r + f, :n_valid] = diff.imag.ravel()
        L[n_r + f, n_valid:] = tot.real.ravel()
    leftover = np.where(covered, 0.0, ktilde)
    return LiftedMatrix(
        matrix=L, radius=region.radius, grid_shape=(N, M), leftover=leftover
    )


def unlift(lifted: LiftedMatrix, normalize: bool = True) -> np.ndarray:
    """Map a lifted matrix back to a k-space grid.

    With normalize=True this inverts :func:`lift` exactly: the adjoint is
    divided by the per-cell read multiplicity (the adjoint-times-forward
    operator is exactly diagonal for this block layout) and the carried
    leftover cells are restored. With normalize=False the raw adjoint is
    returned (leftover ignored, unread cells zero), which is the true
    transpose of the lift map.
    """
    N, M = lifted.grid_shape
    region, slices, n_valid, multiplicity, covered = _plan(N, M, lifted.radius)
    n_r = region.size
    L = lifted.matrix
    if L.shape != (2 * n_r, 2 * n_valid):
        raise ValueError(f"matrix shape {L.shape} does not match plan")
    re = np.zeros((N, M))
    im = np.zeros((N, M))
    vshape = slices[0][0][0], slices[0][0][1]
    rows = vshape[0].stop - vshape[0].start
    cols = vshape[1].stop - vshape[1].start
    for f, (plus, minus) in enumerate(slices):
        d_r = L[f, :n_valid].reshape(rows, cols)
        ns_i = L[f, n_valid:].reshape(rows, cols)
        d_i = L[n_r + f, :n_valid].reshape(rows, cols)
        s_r = L[n_r + f, n_valid:].reshape(rows, cols)
        re[plus] += d_r + s_r
        im[plus] += d_i - ns_i
        re[minus] += (s_r - d_r)[::-1, ::-1]
        im[minus] += (-d_i - ns_i)[::-1, ::-1]
    out = re + 1j * im
    if normalize:
        out /= multiplicity
        out[~covered] = lifted.leftover[~covered]
    return out


def svt(matrix: np.ndarray, eps_keep: int, sigma: float) -> np.ndarray:
    """Partial singular value thresholding.

    The first ``eps_keep`` singular values are kept; the rest are soft
    thresholded to max(s - sigma, 0). sigma=0 returns the input (up to
    roundoff) regardless of eps_keep.

    Wide or tall inputs (aspect ratio >= 4) are routed through an
    eigendecomposition of the small Gram matrix, which costs O(min^2 * max)
    like the direct LAPACK call but with a much smaller constant; the
    result is identical to within roundoff of the kept scale.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if eps_keep < 0 or int(eps_keep) != eps_keep:
        raise ValueError(f"eps_keep must be a nonnegative integer, got {eps_keep}")
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    eps_keep = int(eps_keep)
    rows, cols = A.shape
    small, large = min(rows, cols), max(rows, cols)
    if 4 * small <= large:
        return _svt_gram(A, eps_keep, sigma)
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    shrunk = s.copy()
    shrunk[eps_keep:] = np.maximum(s[eps_keep:] - sigma, 0.0)
    return (u * shrunk) @ vt


def _svt_gram(A: np.ndarray, eps_keep: int, sigma: float) -> np.ndarray:
    transposed = A.shape[0] > A.shape[1]
    B = A.T if transposed else A  # rows <= cols
    w, u = np.linalg.eigh(B @ B.T)
    order = np.argsort(w)[::-1]
    w = w[order]
    u = u[:, order]
    s = np.sqrt(np.maximum(w, 0.0))
    gains = np.ones_like(s)
    if sigma > 0:
        tail = s[eps_keep:]
        gains[eps_keep:] = np.where(
            tail > sigma, 1.0 - sigma / np.maximum(tail, np.finfo(float).tiny), 0.0
        )
    out = (u * gains) @ (u.T @ B)
    return out.T if transposed else out


def lowrank_project(image: np.ndarray, region: SupportRegion, eps_keep: int, sigma: float) -> np.ndarray:
    """Project a complex shot image toward the smooth-phase low-rank set.

    Composition idft . unlift . svt . lift . dft. sigma is an absolute
    threshold on the lifted singular values, so callers should feed images
    on a normalized intensity scale (see :func:`msdwi.grids.normalize_global`);
    with sigma=0 and eps_keep covering the full rank the whole composition
    is the identity.
    """
    lifted = lift(dft_centered(image), region)
    thresholded = svt(lifted.matrix, eps_keep, sigma)
    return idft_centered(unlift(replace(lifted, matrix=thresholded)))


def phase_support_vector(phase_spectrum: np.ndarray, region: SupportRegion) -> np.ndarray:
    """Stacked [Re; Im] samples of a phase spectrum on the negated support.

    For an image I = P * m with m real and the spectrum of P contained in
    ``region``, the returned vector v satisfies v @ lift(dft(I)).matrix = 0
    up to roundoff. The negation matches the e^{-i2pi} forward DFT kernel:
    the annihilating filter reads the spectrum at (-p, -q).
    """
    spec = np.asarray(phase_spectrum, dtype=np.complex128)
    N, M = spec.shape
    cN, cM = N // 2, M // 2
    if region.radius > min(cN, N - 1 - cN, cM, M - 1 - cM):
        raise ValueError(f"support radius {region.radius} exceeds the {N}x{M} grid")
    rows = spec[cN - region.points[:, 0], cM - region.points[:, 1]]
    return np.concatenate([rows.real, rows.imag])
