"""Linear operators for the interleaved multi-shot acquisition model.

Conventions used throughout the package:

* images and k-space grids are 2-D complex arrays indexed (row, column);
  stacks put extra axes in front, so every function here broadcasts over
  leading axes.
* the DFT is unitary (1/sqrt(N*M) both ways) and centered: the DC sample
  of a k-space grid sits at index (N//2, M//2).
* sampling masks are real/boolean grids; applying a mask means elementwise
  multiplication, which models "keep the acquired entries, zero-fill the
  rest" (the adjoint of sampling is the same multiplication).
"""

import numpy as np

__all__ = [
    "dft_centered",
    "idft_centered",
    "apply_forward",
    "apply_adjoint",
    "coil_combine",
    "sos_combine",
]


def dft_centered(img: np.ndarray) -> np.ndarray:
    """Unitary centered 2-D DFT over the last two axes.

    The input is treated as centered in image space and the output is
    centered in k-space (DC at (N//2, M//2)), so the transform and
    :func:`idft_centered` are exact inverses and adjoints of each other.
    """
    shifted = np.fft.ifftshift(img, axes=(-2, -1))
    ksp = np.fft.fft2(shifted, norm="ortho")
    return np.fft.fftshift(ksp, axes=(-2, -1))


def idft_centered(ksp: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft_centered` (also its adjoint)."""
    shifted = np.fft.ifftshift(ksp, axes=(-2, -1))
    img = np.fft.ifft2(shifted, norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


def apply_forward(m, phase, coil, mask) -> np.ndarray:
    """One (shot, channel) forward model evaluation: mask * F(coil * phase * m).

    Args:
        m: real magnitude image, (N, M).
        phase: unit-modulus shot phase factor, broadcastable to m.
        coil: complex coil sensitivity, broadcastable to m.
        mask: binary sampling mask of the shot.

    Returns:
        Masked k-space grid (zero outside the sampled entries).
    """
    return mask * dft_centered(coil * (phase * m))


def apply_adjoint(y, phase, coil, mask) -> np.ndarray:
    """Adjoint of :func:`apply_forward`: conj(coil*phase) * F^-1(mask * y)."""
    return np.conj(coil * phase) * idft_centered(mask * y)


def coil_combine(images: np.ndarray, coils: np.ndarray) -> np.ndarray:
    """Sensitivity-weighted channel combination sum_h conj(C_h) * image_h.

    ``images`` and ``coils`` are stacked (H, N, M); with normalized maps
    (sum_h |C_h|^2 = 1) this is the least-squares channel combination.
    """
    if images.shape != coils.shape:
        raise ValueError(
            f"channel stack {images.shape} does not match coil maps {coils.shape}"
        )
    return np.sum(np.conj(coils) * images, axis=-3)


def sos_combine(images: np.ndarray, axis: int = 0) -> np.ndarray:
    """Root-sum-of-squares magnitude combination along ``axis``."""
    return np.sqrt(np.sum(np.abs(images) ** 2, axis=axis))
