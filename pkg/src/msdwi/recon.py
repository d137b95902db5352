"""Alternating-projection solvers for multi-shot phase-corrected recon.

The explicit solver alternates three steps: enforce data consistency of
the per-shot images under the current magnitude/phase estimate, project
each shot image toward the smooth-phase low-rank set and re-extract its
phase, then average the demodulated shots into a common real magnitude
with an optional edge-weighted TV descent and a relaxation step. The
implicit baseline runs the same consistency and low-rank projections on
free per-shot complex images (no shared magnitude) and combines them by
root-sum-of-squares at the end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .grids import AcquisitionSet
from .lifting import SupportRegion, lowrank_project, support_points
from .operators import dft_centered, idft_centered, sos_combine
from .wtv import EdgeWeights, compute_weights, wtv_subgradient

__all__ = [
    "METHODS",
    "ReconConfig",
    "ReconResult",
    "DivergenceError",
    "data_consistency_step",
    "phase_update_step",
    "magnitude_update_step",
    "pair_reconstruct",
    "phase_only_reconstruct",
    "plrhm_reconstruct",
    "reconstruct",
    "check_convergence",
]

METHODS = ("PAIR", "PAIR-TV", "PHASE", "PLRHM")

ZERO_PHASE_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """Iteration blew up (non-finite values or exploding update)."""


@dataclass(frozen=True)
class ReconConfig:
    """Solver parameters; defaults follow the reference operating point."""

    method: str = "PAIR"
    lam: float = 1.0  # data-consistency residual step
    beta: float = 4e-4  # TV descent size (0 disables the regularizer)
    eta: float = 1.5  # relaxation of the magnitude update, in [1, 2)
    eps_keep: int = 20  # singular values kept untouched
    sigma: float = 0.6  # soft threshold on the remaining singular values
    radius: int = 2  # phase spectrum support radius
    delta: float = 0.01  # edge-weight falloff
    max_iters: int = 1000
    tol: float = 1e-5  # stop when squared relative magnitude change < tol
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not 1.0 <= self.eta < 2.0:
            raise ValueError(f"eta must lie in [1, 2), got {self.eta}")
        if self.eps_keep < 0 or int(self.eps_keep) != self.eps_keep:
            raise ValueError(f"eps_keep must be a nonnegative integer, got {self.eps_keep}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ValueError(f"radius must be a nonnegative integer, got {self.radius}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class ReconResult:
    """Solver output plus the deterministic iteration trace."""

    magnitude: np.ndarray  # (N, M) real nonnegative
    phases: np.ndarray  # (J, N, M) unit-modulus phase factors
    iterations: int
    converged: bool
    rel_change: tuple[float, ...]  # squared relative magnitude change per iter
    residual: tuple[float, ...]  # relative data residual per iter
    wall_seconds: float
    config: ReconConfig

    def trace(self) -> list[dict]:
        """Per-iteration records suitable for JSON serialization."""
        return [
            {"iteration": k + 1, "rel_change": c, "data_residual": r}
            for k, (c, r) in enumerate(zip(self.rel_change, self.residual))
        ]


def _unit_phase(images: np.ndarray) -> np.ndarray:
    """Phase factors image/|image| with the zero-magnitude convention P=1."""
    mag = np.abs(images)
    tiny = mag < ZERO_PHASE_FLOOR
    out = images / np.where(tiny, 1.0, mag)
    out[tiny] = 1.0
    return out


def _consistency_core(shot_images, acq: AcquisitionSet, coils, lam):
    """Shared data-consistency update on per-shot coil-free images.

    Returns the updated coil-combined shot images and the squared data
    residual accumulated over all shots/channels.
    """
    expanded = coils[None] * shot_images[:, None]  # (J, H, N, M)
    ksp = dft_centered(expanded)
    resid = acq.kspace - acq.masks[:, None] * ksp
    updated = expanded + lam * idft_centered(resid)
    combined = np.sum(np.conj(coils)[None] * updated, axis=1)
    return combined, float(np.sum(resid.real**2 + resid.imag**2))


def data_consistency_step(magnitude, phases, acq: AcquisitionSet, coils, lam: float = 1.0):
    """One consistency pass on the explicit model: returns J shot images.

    With noiseless fully sampled data and exactly matching (magnitude,
    phases), the output equals phases * magnitude (fixed point).
    """
    images, _ = _consistency_core(phases * magnitude, acq, coils, lam)
    return images


def phase_update_step(shot_images, region: SupportRegion, eps_keep: int, sigma: float):
    """Low-rank projection of each shot image and phase re-extraction."""
    projected = np.stack(
        [lowrank_project(img, region, eps_keep, sigma) for img in shot_images]
    )
    return _unit_phase(projected), projected


def magnitude_update_step(magnitude, phases, shot_images, weights, beta, eta):
    """Average demodulated shots, descend the weighted-TV surrogate, relax.

    The result is clamped to be nonnegative (the magnitude is a real
    nonnegative field by model assumption).
    """
    m_avg = np.mean(np.real(np.conj(phases) * shot_images), axis=0)
    if beta != 0.0:
        m_avg = m_avg - beta * wtv_subgradient(m_avg, weights)
    relaxed = magnitude + eta * (m_avg - magnitude)
    return np.maximum(relaxed, 0.0)


def check_convergence(history, tol: float) -> bool:
    """True when the last recorded squared relative change is below tol."""
    return len(history) > 0 and history[-1] < tol


def _zero_filled_init(acq: AcquisitionSet, coils):
    images = idft_centered(acq.kspace)  # (J, H, N, M)
    shots = np.sum(np.conj(coils)[None] * images, axis=1)
    return shots


def _step_metrics(m_new, m_old):
    delta = m_new - m_old
    num = float(np.sum(delta * delta))
    den = float(np.sum(m_old * m_old))
    return num / max(den, np.finfo(float).tiny)


def _resolve_weights(config: ReconConfig, weights, m0, shape) -> EdgeWeights:
    if config.method == "PAIR-TV":
        return EdgeWeights.ones(shape)
    if weights is not None:
        return weights
    if config.beta == 0.0:
        return EdgeWeights.ones(shape)
    if m0 is None:
        raise ValueError("PAIR with beta > 0 needs edge weights or a reference m0")
    return compute_weights(m0, config.delta)


def pair_reconstruct(
    acq: AcquisitionSet,
    coils: np.ndarray,
    config: ReconConfig,
    weights: EdgeWeights | None = None,
    m0: np.ndarray | None = None,
    frozen_phases: np.ndarray | None = None,
) -> ReconResult:
    """Explicit phase-and-magnitude reconstruction.

    Args:
        acq: normalized acquisition (see grids.normalize_global).
        coils: (H, N, M) normalized sensitivity maps.
        config: solver parameters; beta=0 turns off the TV step.
        weights: precomputed edge weights; computed from m0 when absent.
        m0: reference image for the weights (required if beta > 0 and no
            weights are given).
        frozen_phases: optional (J, N, M) unit-modulus phase factors; when
            given, phase estimation is skipped and these are used verbatim.

    Returns:
        ReconResult; raises DivergenceError when the iteration blows up.
    """
    start = time.perf_counter()
    coils = np.asarray(coils, dtype=np.complex128)
    N, M = acq.grid_shape
    w = _resolve_weights(config, weights, m0, (N, M))
    region = support_points(config.radius)
    shots0 = _zero_filled_init(acq, coils)
    magnitude = sos_combine(shots0, axis=0)
    phases = _unit_phase(shots0) if frozen_phases is None else np.asarray(frozen_phases)
    norm_y = float(np.sum(acq.kspace.real**2 + acq.kspace.imag**2))
    rel_hist: list[float] = []
    res_hist: list[float] = []
    converged = False
    iterations = 0
    for _ in range(config.max_iters):
        images, resid_sq = _consistency_core(phases * magnitude, acq, coils, config.lam)
        if frozen_phases is None:
            phases, images = phase_update_step(images, region, config.eps_keep, config.sigma)
        m_new = magnitude_update_step(magnitude, phases, images, w, config.beta, config.eta)
        rel = _step_metrics(m_new, magnitude)
        if not np.isfinite(rel) or rel > 1e3 or not np.all(np.isfinite(m_new)):
            raise DivergenceError(f"iteration {iterations + 1} diverged (rel change {rel:.3g})")
        magnitude = m_new
        iterations += 1
        rel_hist.append(rel)
        res_hist.append(np.sqrt(resid_sq / max(norm_y, np.finfo(float).tiny)))
        if check_convergence(rel_hist, config.tol):
            converged = True
            break
    return ReconResult(
        magnitude=magnitude,
        phases=phases,
        iterations=iterations,
        converged=converged,
        rel_change=tuple(rel_hist),
        residual=tuple(res_hist),
        wall_seconds=time.perf_counter() - start,
        config=config,
    )


def phase_only_reconstruct(acq, coils, config: ReconConfig) -> ReconResult:
    """The explicit solver without the TV step (beta forced to 0)."""
    return pair_reconstruct(acq, coils, replace(config, method="PHASE", beta=0.0))


def plrhm_reconstruct(acq, coils, config: ReconConfig) -> ReconResult:
    """Implicit baseline: per-shot low-rank images, SOS-combined at the end.

    No shared magnitude or explicit phase estimate is maintained; the
    convergence metric tracks the SOS magnitude of the shot images.
    """
    start = time.perf_counter()
    coils = np.asarray(coils, dtype=np.complex128)
    region = support_points(config.radius)
    shots = _zero_filled_init(acq, coils)
    magnitude = sos_combine(shots, axis=0)
    norm_y = float(np.sum(acq.kspace.real**2 + acq.kspace.imag**2))
    rel_hist: list[float] = []
    res_hist: list[float] = []
    converged = False
    iterations = 0
    for _ in range(config.max_iters):
        shots, resid_sq = _consistency_core(shots, acq, coils, config.lam)
        shots = np.stack(
            [lowrank_project(img, region, config.eps_keep, config.sigma) for img in shots]
        )
        m_new = sos_combine(shots, axis=0)
        rel = _step_metrics(m_new, magnitude)
        if not np.isfinite(rel) or rel > 1e3 or not np.all(np.isfinite(m_new)):
            raise DivergenceError(f"iteration {iterations + 1} diverged (rel change {rel:.3g})")
        magnitude = m_new
        iterations += 1
        rel_hist.append(rel)
        res_hist.append(np.sqrt(resid_sq / max(norm_y, np.finfo(float).tiny)))
        if check_convergence(rel_hist, config.tol):
            converged = True
            break
    return ReconResult(
        magnitude=magnitude,
        phases=_unit_phase(shots),
        iterations=iterations,
        converged=converged,
        rel_change=tuple(rel_hist),
        residual=tuple(res_hist),
        wall_seconds=time.perf_counter() - start,
        config=config,
    )


def reconstruct(
    acq: AcquisitionSet,
    coils: np.ndarray,
    config: ReconConfig,
    weights: EdgeWeights | None = None,
    m0: np.ndarray | None = None,
    frozen_phases: np.ndarray | None = None,
) -> ReconResult:
    """Dispatch on config.method."""
    if config.method == "PLRHM":
        return plrhm_reconstruct(acq, coils, config)
    if config.method == "PHASE":
        return phase_only_reconstruct(acq, coils, config)
    return pair_reconstruct(acq, coils, config, weights=weights, m0=m0, frozen_phases=frozen_phases)
