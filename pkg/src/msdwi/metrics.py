"""Scoring: PSNR, diffusion tensor fitting, principal directions, AAE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DirectionField", "psnr", "fit_tensor", "primary_direction", "aae"]


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio 10*log10(N*M / ||test - ref||^2) in dB.

    Both images are rescaled by the factor that brings the reference peak
    to 1, so the caller must supply the test image in reference units.
    Identical images give +inf.
    """
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape or ref.ndim != 2:
        raise ValueError(f"need matching 2-D images, got {ref.shape} vs {test.shape}")
    peak = ref.max()
    if peak <= 0:
        raise ValueError("reference image has no positive peak")
    err = np.sum(((test - ref) / peak) ** 2)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(ref.size / err))


@dataclass(frozen=True)
class DirectionField:
    """Per-pixel principal diffusion direction with a validity mask."""

    vectors: np.ndarray  # (N, M, 3), unit norm where valid
    valid: np.ndarray  # (N, M) bool
    fa: np.ndarray | None = None  # (N, M) fractional anisotropy


def fit_tensor(
    dwis: np.ndarray,
    bvals: np.ndarray,
    directions: np.ndarray,
    b0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel least-squares diffusion tensor fit.

    Solves ln(s_k / s_0) = -b_k * g_k^T D g_k for the six unique tensor
    entries. Needs at least six directions spanning the quadratic forms
    (six coplanar directions are rejected as rank-deficient). Pixels where
    any signal or the b0 is nonpositive are marked invalid.

    Args:
        dwis: (K, N, M) diffusion-weighted magnitudes.
        bvals: (K,) b-values.
        directions: (K, 3) unit encoding directions.
        b0: (N, M) non-diffusion image.

    Returns:
        tensors (N, M, 3, 3) symmetric, and valid (N, M) bool.
    """
    dwis = np.asarray(dwis, dtype=np.float64)
    bvals = np.asarray(bvals, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    if dwis.ndim != 3 or dwis.shape[1:] != b0.shape:
        raise ValueError(f"dwi stack {dwis.shape} does not match b0 {b0.shape}")
    K = dwis.shape[0]
    if bvals.shape != (K,) or directions.shape != (K, 3):
        raise ValueError("bvals and directions must match the stack length")
    gx, gy, gz = directions.T
    design = -bvals[:, None] * np.stack(
        [gx * gx, gy * gy, gz * gz, 2 * gx * gy, 2 * gx * gz, 2 * gy * gz], axis=1
    )
    if K < 6 or np.linalg.matrix_rank(design) < 6:
        raise ValueError(
            f"{K} directions do not determine a tensor (need >= 6 non-coplanar)"
        )
    valid = (b0 > 0) & np.all(dwis > 0, axis=0)
    ratio = np.where(valid, dwis, 1.0) / np.where(b0 > 0, b0, 1.0)
    logs = np.log(np.where(ratio > 0, ratio, 1.0)).reshape(K, -1)
    coeffs, *_ = np.linalg.lstsq(design, logs, rcond=None)
    N, M = b0.shape
    dxx, dyy, dzz, dxy, dxz, dyz = coeffs.reshape(6, N, M)
    tensors = np.empty((N, M, 3, 3))
    tensors[..., 0, 0] = dxx
    tensors[..., 1, 1] = dyy
    tensors[..., 2, 2] = dzz
    tensors[..., 0, 1] = tensors[..., 1, 0] = dxy
    tensors[..., 0, 2] = tensors[..., 2, 0] = dxz
    tensors[..., 1, 2] = tensors[..., 2, 1] = dyz
    return tensors, valid


def primary_direction(tensors: np.ndarray, valid: np.ndarray | None = None) -> DirectionField:
    """Principal eigenvector and fractional anisotropy of a tensor field.

    The sign convention makes the first nonzero component of each vector
    positive, since an eigenvector's sign carries no information.
    """
    tensors = np.asarray(tensors, dtype=np.float64)
    if tensors.ndim != 4 or tensors.shape[-2:] != (3, 3):
        raise ValueError(f"expected (N, M, 3, 3) tensors, got {tensors.shape}")
    if valid is None:
        valid = np.ones(tensors.shape[:2], dtype=bool)
    eigvals, eigvecs = np.linalg.eigh(tensors)  # ascending eigenvalues
    principal = eigvecs[..., :, 2]
    # fix sign: first component whose magnitude is non-negligible goes positive
    sign = np.where(
        np.abs(principal[..., 0]) > 1e-12,
        np.sign(principal[..., 0]),
        np.where(
            np.abs(principal[..., 1]) > 1e-12,
            np.sign(principal[..., 1]),
            np.where(principal[..., 2] < 0, -1.0, 1.0),
        ),
    )
    principal = principal * sign[..., None]
    mean = eigvals.mean(axis=-1, keepdims=True)
    num = np.sum((eigvals - mean) ** 2, axis=-1)
    den = np.sum(eigvals**2, axis=-1)
    fa = np.sqrt(1.5 * num / np.where(den > 0, den, 1.0))
    fa = np.where(den > 0, fa, 0.0)
    return DirectionField(vectors=principal, valid=np.asarray(valid, bool), fa=fa)


def aae(ref: DirectionField, test: DirectionField) -> float:
    """Average angular error in degrees over jointly valid pixels.

    Antipodal vectors count as equal (the inner product enters through its
    absolute value).
    """
    if ref.vectors.shape != test.vectors.shape:
        raise ValueError("direction fields have mismatched shapes")
    both = ref.valid & test.valid
    if not np.any(both):
        raise ValueError("no jointly valid pixels")
    dots = np.abs(np.sum(ref.vectors[both] * test.vectors[both], axis=-1))
    angles = np.arccos(np.clip(dots, -1.0, 1.0))
    return float(np.degrees(angles.mean()))
