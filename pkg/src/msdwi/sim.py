"""Ground-truth generation: phantom, coil maps, shot phases, sampling, noise.

Everything here is deterministic given a seed; all randomness goes through
numpy Generators so a simulation can be reproduced bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grids import AcquisitionSet
from .operators import dft_centered, idft_centered

__all__ = [
    "SHEPP_LOGAN_ELLIPSES",
    "CoilGeometry",
    "MotionPhaseParams",
    "shepp_logan",
    "biot_savart_coils",
    "polynomial_shot_phase",
    "background_phase",
    "shot_phase_factors",
    "diffusion_decay",
    "make_interleave_masks",
    "retrospective_undersample",
    "synthesize_acquisition",
    "synthetic_tensor_field",
]

# modified Shepp-Logan ellipse table: intensity, semi-axis a (x), semi-axis
# b (y), center x0, y0, rotation angle in degrees
SHEPP_LOGAN_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def _image_coords(N: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates on [-1, 1]^2: x along columns, y up the rows."""
    ys = 1.0 - 2.0 * np.arange(N) / (N - 1) if N > 1 else np.zeros(1)
    xs = 2.0 * np.arange(M) / (M - 1) - 1.0 if M > 1 else np.zeros(1)
    return np.meshgrid(ys, xs, indexing="ij")


def shepp_logan(N: int, M: int, ellipses=SHEPP_LOGAN_ELLIPSES) -> np.ndarray:
    """Rasterize the modified Shepp-Logan phantom onto an N x M grid.

    Intensities are the sum of all ellipses containing each pixel center,
    clamped to [0, 1]; the corners (outside the skull) are exactly 0.
    """
    if N < 1 or M < 1:
        raise ValueError(f"phantom dimensions must be positive, got {N}x{M}")
    yg, xg = _image_coords(N, M)
    img = np.zeros((N, M))
    for amp, a, b, x0, y0, phi_deg in ellipses:
        phi = np.deg2rad(phi_deg)
        dx = xg - x0
        dy = yg - y0
        u = dx * np.cos(phi) + dy * np.sin(phi)
        v = -dx * np.sin(phi) + dy * np.cos(phi)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += amp
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class CoilGeometry:
    """Circular receive loops on a ring around the field of view.

    Loop centers sit on a circle of ring_scale x half-FOV, loop normals lie
    in-plane pointing at the isocenter (tilt 0), and each loop has radius
    loop_scale x FOV. The wire is discretized into ``segments`` straight
    pieces for the Biot-Savart sum.
    """

    ring_scale: float = 1.5
    loop_scale: float = 0.4
    segments: int = 180


def biot_savart_coils(
    N: int, M: int, H: int, geometry: CoilGeometry | None = None
) -> np.ndarray:
    """Complex coil sensitivity maps from current loops, SOS-normalized.

    Returns an (H, N, M) array with sum_h |C_h|^2 = 1 everywhere. Loop h
    sits at angle 2*pi*h/H, so consecutive maps are rotated copies of each
    other up to a constant phase.
    """
    if H < 1:
        raise ValueError(f"need at least one channel, got {H}")
    geometry = geometry or CoilGeometry()
    maps = _loop_fields(N, M, H, geometry)
    power = np.sum(np.abs(maps) ** 2, axis=0)
    return maps / np.sqrt(power)


@lru_cache(maxsize=8)
def _loop_fields_cached(N, M, H, ring_scale, loop_scale, segments):
    yg, xg = _image_coords(N, M)
    pixels = np.stack([xg.ravel(), yg.ravel(), np.zeros(N * M)], axis=1)
    radius = loop_scale * 2.0  # FOV spans 2 units
    t = 2.0 * np.pi * (np.arange(segments) + 0.5) / segments
    maps = np.empty((H, N, M), dtype=np.complex128)
    for h in range(H):
        theta = 2.0 * np.pi * h / H
        center = ring_scale * np.array([np.cos(theta), np.sin(theta), 0.0])
        u = np.array([-np.sin(theta), np.cos(theta), 0.0])  # tangential
        v = np.array([0.0, 0.0, 1.0])  # through-plane
        wire = center + radius * (np.cos(t)[:, None] * u + np.sin(t)[:, None] * v)
        dl = (2.0 * np.pi * radius / segments) * (
            -np.sin(t)[:, None] * u + np.cos(t)[:, None] * v
        )
        diff = pixels[None, :, :] - wire[:, None, :]
        dist3 = np.sum(diff * diff, axis=2) ** 1.5
        field = np.cross(dl[:, None, :], diff) / dist3[:, :, None]
        b = field.sum(axis=0)
        maps[h] = (b[:, 0] - 1j * b[:, 1]).reshape(N, M)
    maps.setflags(write=False)
    return maps


def _loop_fields(N, M, H, geometry: CoilGeometry):
    return _loop_fields_cached(
        N, M, H, geometry.ring_scale, geometry.loop_scale, geometry.segments
    )


@dataclass(frozen=True)
class MotionPhaseParams:
    """Per-shot second-order polynomial phase coefficients.

    Coefficient ranges shrink with the grid so each term contributes a
    bounded phase excursion: constant in [-pi, pi), linear in
    [-pi/2N, pi/2N) per pixel, quadratic in [-pi/3N^2, pi/3N^2).
    """

    coeffs: np.ndarray  # (J, 6): a1 + a2 x + a3 y + a4 x^2 + a5 y^2 + a6 xy

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[1] != 6:
            raise ValueError(f"coeffs must be (J, 6), got {coeffs.shape}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def shots(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def draw(cls, N: int, M: int, shots: int, rng) -> "MotionPhaseParams":
        rng = np.random.default_rng(rng)
        bounds = np.array(
            [
                np.pi,
                np.pi / (2 * N),
                np.pi / (2 * M),
                np.pi / (3 * N * N),
                np.pi / (3 * M * M),
                np.pi / (3 * N * M),
            ]
        )
        coeffs = rng.uniform(-bounds, bounds, size=(shots, 6))
        return cls(coeffs=coeffs)


def polynomial_shot_phase(params: MotionPhaseParams, j: int, N: int, M: int) -> np.ndarray:
    """Motion phase map (radians) of shot j on pixel-index coordinates."""
    if not 0 <= j < params.shots:
        raise ValueError(f"shot index {j} out of range for {params.shots} shots")
    a1, a2, a3, a4, a5, a6 = params.coeffs[j]
    x = np.arange(N, dtype=np.float64)[:, None]
    y = np.arange(M, dtype=np.float64)[None, :]
    return a1 + a2 * x + a3 * y + a4 * x * x + a5 * y * y + a6 * x * y


def background_phase(N: int, M: int, rng) -> np.ndarray:
    """Smooth random background phase (radians), peak scaled to pi/2.

    Built from random k-space samples confined to the central 5 x 5 block,
    so the spectrum of the result is exactly contained there (the real part
    keeps the block support because the block is symmetric about DC).
    """
    if N < 5 or M < 5:
        raise ValueError(f"grid {N}x{M} too small for the 5x5 spectral block")
    rng = np.random.default_rng(rng)
    ksp = np.zeros((N, M), dtype=np.complex128)
    cN, cM = N // 2, M // 2
    block = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    ksp[cN - 2 : cN + 3, cM - 2 : cM + 3] = block
    phi = idft_centered(ksp).real
    peak = np.abs(phi).max()
    return phi * (np.pi / 2 / peak)


def shot_phase_factors(motion_phases: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Unit-modulus per-shot phase factors exp(-i(motion + background))."""
    return np.exp(-1j * (np.asarray(motion_phases) + np.asarray(background)))


def diffusion_decay(s0: np.ndarray, b: float, D) -> np.ndarray:
    """Apply mono-exponential diffusion attenuation s0 * exp(-b * D).

    D may be a scalar diffusivity or a per-pixel map (mm^2/s when b is in
    s/mm^2).
    """
    if b < 0:
        raise ValueError(f"b-value must be nonnegative, got {b}")
    D = np.asarray(D, dtype=np.float64)
    if np.any(D < 0):
        raise ValueError("diffusivity must be nonnegative")
    return np.asarray(s0, dtype=np.float64) * np.exp(-b * D)


def make_interleave_masks(N: int, M: int, J: int) -> np.ndarray:
    """J disjoint shot masks; shot j samples phase-encode lines j, j+J, ...

    Phase encoding runs along columns; all rows of a sampled line are kept.
    """
    if not 1 <= J <= M:
        raise ValueError(f"shot count {J} must be in 1..{M}")
    masks = np.zeros((J, N, M), dtype=bool)
    for j in range(J):
        masks[j, :, j::J] = True
    return masks


def retrospective_undersample(masks: np.ndarray, mode: str, rate: float) -> np.ndarray:
    """Drop acquired phase-encode lines from each shot's mask.

    uniform: keep every ceil(1/rate)-th acquired line of each shot,
    starting from its first. partial-fourier: keep the acquired lines with
    index < ceil(rate * M) plus any acquired lines inside the fully sampled
    8-line central band. Masks stay subsets of the originals.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3:
        raise ValueError(f"expected (J, N, M) masks, got shape {masks.shape}")
    if not 0 < rate <= 1:
        raise ValueError(f"sampling rate must be in (0, 1], got {rate}")
    J, N, M = masks.shape
    out = np.zeros_like(masks)
    if mode == "uniform":
        step = int(np.ceil(1.0 / rate))
        for j in range(J):
            lines = np.flatnonzero(masks[j].any(axis=0))
            keep = lines[::step]
            out[j][:, keep] = masks[j][:, keep]
    elif mode == "partial-fourier":
        cutoff = int(np.ceil(rate * M))
        band_lo = M // 2 - 4
        keep_line = np.zeros(M, dtype=bool)
        keep_line[:cutoff] = True
        keep_line[max(band_lo, 0) : band_lo + 8] = True
        out = masks & keep_line[None, None, :]
    else:
        raise ValueError(f"unknown undersampling mode {mode!r}")
    empty = [j for j in range(J) if not out[j].any()]
    if empty:
        raise ValueError(f"rate {rate} empties the mask of shot {empty[0]}")
    return out


def synthesize_acquisition(
    phantom: np.ndarray,
    coils: np.ndarray,
    motion_phases: np.ndarray,
    background: np.ndarray,
    masks: np.ndarray,
    noise_snr_db: float | None,
    rng,
    *,
    mask_kind: str = "full-interleave",
    b_value: float = 0.0,
    direction=(0.0, 0.0, 1.0),
) -> AcquisitionSet:
    """Run the forward model and add complex white noise on sampled entries.

    noise variance is set so 10*log10(mean |signal|^2 / noise variance)
    over the sampled entries equals noise_snr_db; None or +inf disables
    noise. Deterministic for a fixed generator state.
    """
    phantom = np.asarray(phantom, dtype=np.float64)
    coils = np.asarray(coils, dtype=np.complex128)
    masks = np.asarray(masks, dtype=bool)
    N, M = phantom.shape
    J = masks.shape[0]
    if coils.ndim != 3 or coils.shape[1:] != (N, M):
        raise ValueError(f"coil maps {coils.shape} do not match phantom {(N, M)}")
    if np.asarray(motion_phases).shape != (J, N, M):
        raise ValueError("motion phase stack must be (J, N, M)")
    factors = shot_phase_factors(motion_phases, background)
    clean = masks[:, None] * dft_centered(coils[None] * (factors[:, None] * phantom))
    if noise_snr_db is None or np.isinf(noise_snr_db):
        noisy = clean
    else:
        rng = np.random.default_rng(rng)
        sampled = np.broadcast_to(masks[:, None], clean.shape)
        n_sampled = int(sampled.sum())
        signal_power = float(np.sum(np.abs(clean) ** 2)) / n_sampled
        sigma = np.sqrt(signal_power * 10.0 ** (-noise_snr_db / 10.0))
        noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        noisy = clean + sampled * (sigma / np.sqrt(2.0)) * noise
    return AcquisitionSet(
        kspace=noisy,
        masks=masks,
        mask_kind=mask_kind,
        b_value=b_value,
        direction=direction,
    )


def synthetic_tensor_field(N: int, M: int, support: np.ndarray | None = None) -> np.ndarray:
    """Smooth anisotropic tensor field for metric round-trip tests.

    Inside the support the principal eigenvector rotates tangentially
    around the image center with eigenvalues (1.7, 0.4, 0.2) x 1e-3;
    outside it the medium is isotropic at 0.7e-3. Returns (N, M, 3, 3).
    """
    yg, xg = _image_coords(N, M)
    angle = np.arctan2(yg, xg) + np.pi / 2.0
    e1 = np.stack([np.cos(angle), np.sin(angle), np.zeros_like(angle)], axis=-1)
    e2 = np.stack([-np.sin(angle), np.cos(angle), np.zeros_like(angle)], axis=-1)
    e3 = np.zeros_like(e1)
    e3[..., 2] = 1.0
    lam = (1.7e-3, 0.4e-3, 0.2e-3)
    tensors = (
        lam[0] * e1[..., :, None] * e1[..., None, :]
        + lam[1] * e2[..., :, None] * e2[..., None, :]
        + lam[2] * e3[..., :, None] * e3[..., None, :]
    )
    iso = 0.7e-3 * np.eye(3)
    if support is None:
        support = np.ones((N, M), dtype=bool)
    return np.where(support[..., None, None], tensors, iso)
