"""Edge-weighted total variation: weights, value, and subgradient.

Weights are derived from a high-SNR reference image (the non-diffusion
image): each backward-difference direction gets weight
exp(-(reference difference)^2 / delta) after the reference is rescaled to
peak 1, so established edges are penalized less. Differences use backward
stencils with zero padding at the leading boundary, and the TV magnitude
is smoothed as sqrt(w_v*dv^2 + w_h*dh^2 + eps^2) - eps so the value is
exact at eps=0 and differentiable everywhere otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EdgeWeights", "compute_weights", "wtv_value", "wtv_subgradient"]

SMOOTHING_EPS = 1e-8


@dataclass(frozen=True)
class EdgeWeights:
    """Per-pixel weights for the vertical and horizontal differences."""

    vert: np.ndarray  # weight on m(x,y) - m(x-1,y)
    horiz: np.ndarray  # weight on m(x,y) - m(x,y-1)

    def __post_init__(self):
        vert = np.asarray(self.vert, dtype=np.float64)
        horiz = np.asarray(self.horiz, dtype=np.float64)
        if vert.shape != horiz.shape or vert.ndim != 2:
            raise ValueError("weight grids must be two matching 2-D arrays")
        if np.any(vert < 0) or np.any(horiz < 0) or np.any(vert > 1) or np.any(horiz > 1):
            raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "vert", vert)
        object.__setattr__(self, "horiz", horiz)

    @classmethod
    def ones(cls, shape: tuple[int, int]) -> "EdgeWeights":
        return cls(np.ones(shape), np.ones(shape))


def _backward_diffs(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dv = np.zeros_like(m)
    dh = np.zeros_like(m)
    dv[1:, :] = m[1:, :] - m[:-1, :]
    dh[:, 1:] = m[:, 1:] - m[:, :-1]
    return dv, dh


def compute_weights(m0: np.ndarray, delta: float = 0.01) -> EdgeWeights:
    """Edge weights exp(-diff^2/delta) from a reference image.

    The reference is rescaled to peak magnitude 1 first, so delta is
    scale-free. A constant reference gives unit weights everywhere.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    m0 = np.asarray(m0, dtype=np.float64)
    if m0.ndim != 2:
        raise ValueError(f"expected a 2-D reference image, got shape {m0.shape}")
    peak = np.abs(m0).max()
    if peak > 0:
        m0 = m0 / peak
    dv, dh = _backward_diffs(m0)
    return EdgeWeights(np.exp(-dv**2 / delta), np.exp(-dh**2 / delta))


def wtv_value(m: np.ndarray, weights: EdgeWeights, eps: float = SMOOTHING_EPS) -> float:
    """Weighted total variation sum sqrt(w_v*dv^2 + w_h*dh^2 + eps^2) - eps."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != weights.vert.shape:
        raise ValueError(f"image {m.shape} does not match weights {weights.vert.shape}")
    dv, dh = _backward_diffs(m)
    mag = np.sqrt(weights.vert * dv**2 + weights.horiz * dh**2 + eps * eps)
    return float(np.sum(mag - eps))


def wtv_subgradient(m: np.ndarray, weights: EdgeWeights, eps: float = SMOOTHING_EPS) -> np.ndarray:
    """Gradient of :func:`wtv_value` in m (exact for the smoothed value).

    Each pixel receives the direct terms of its own differences minus the
    transported terms of the two neighbors that difference against it.
    Constant images map to zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != weights.vert.shape:
        raise ValueError(f"image {m.shape} does not match weights {weights.vert.shape}")
    dv, dh = _backward_diffs(m)
    mag = np.sqrt(weights.vert * dv**2 + weights.horiz * dh**2 + eps * eps)
    safe = np.where(mag > 0, mag, 1.0)
    gv = weights.vert * dv / safe
    gh = weights.horiz * dh / safe
    grad = gv + gh
    grad[:-1, :] -= gv[1:, :]
    grad[:, :-1] -= gh[:, 1:]
    return grad
