"""Acquisition containers, the .msk file pair, and image export.

An acquisition is stored on disk as a pair ``<name>.json`` + ``<name>.cplx``:
a JSON header carrying dimensions, dtype, endianness, acquisition metadata
and run-length encoded sampling masks, plus a raw payload of little-endian
float32 interleaved real/imaginary values in (shot, channel, row, column)
order. The same container holds coil maps (J=1, content "coils") and
real-valued ground-truth sidecars (content "image"/"phases").
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .operators import idft_centered, sos_combine

__all__ = [
    "AcquisitionSet",
    "FormatError",
    "MASK_KINDS",
    "load_acquisition",
    "save_acquisition",
    "save_grids",
    "load_grids",
    "save_coilmaps",
    "load_coilmaps",
    "normalize_global",
    "export_grayscale",
    "encode_mask_rle",
    "decode_mask_rle",
]

MASK_KINDS = ("full-interleave", "uniform-undersampled", "partial-fourier")

_MAGIC = "msk-acquisition"
_VERSION = 1


class FormatError(ValueError):
    """Malformed .msk header or payload."""


@dataclass(frozen=True)
class AcquisitionSet:
    """Multi-shot multi-channel k-space data with per-shot sampling masks.

    Fields:
        kspace: complex (J, H, N, M) array; exact zero wherever the shot's
            mask is zero.
        masks: boolean (J, N, M) sampling masks, one per shot.
        mask_kind: one of MASK_KINDS.
        b_value: diffusion weighting in s/mm^2.
        direction: unit diffusion-encoding direction (3-vector).
    """

    kspace: np.ndarray
    masks: np.ndarray
    mask_kind: str = "full-interleave"
    b_value: float = 0.0
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        ksp = np.asarray(self.kspace, dtype=np.complex128)
        masks = np.asarray(self.masks, dtype=bool)
        if ksp.ndim != 4:
            raise ValueError(f"kspace must be (J, H, N, M), got shape {ksp.shape}")
        J, H, N, M = ksp.shape
        if masks.shape != (J, N, M):
            raise ValueError(
                f"masks shape {masks.shape} does not match kspace {(J, N, M)}"
            )
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if not np.all(np.isfinite(ksp.view(np.float64))):
            raise ValueError("kspace contains non-finite values")
        # non-acquired entries must be exact zeros
        if np.any(ksp[~np.broadcast_to(masks[:, None], ksp.shape)] != 0):
            raise ValueError("kspace is nonzero outside the sampling masks")
        if self.mask_kind == "full-interleave":
            _check_interleave(masks)
        ksp.setflags(write=False)
        masks.setflags(write=False)
        object.__setattr__(self, "kspace", ksp)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))

    @property
    def shots(self) -> int:
        return self.kspace.shape[0]

    @property
    def channels(self) -> int:
        return self.kspace.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.kspace.shape[2], self.kspace.shape[3]


def _check_interleave(masks: np.ndarray):
    """Full interleave: each phase-encode column belongs to exactly one shot."""
    per_line = masks.any(axis=1)  # (J, M): shot samples column m
    owners = per_line.sum(axis=0)
    if np.any(owners > 1):
        bad = int(np.nonzero(owners > 1)[0][0])
        raise ValueError(f"full-interleave masks overlap on PE line {bad}")
    if np.any(owners == 0):
        bad = int(np.nonzero(owners == 0)[0][0])
        raise ValueError(f"full-interleave masks leave PE line {bad} uncovered")


# ---------------------------------------------------------------------------
# mask run-length encoding (flattened row-major, runs alternate 0s/1s,
# starting with the count of leading zeros)

def encode_mask_rle(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return [0]
    lengths = list(_run_lengths(flat))
    # pad a zero-length leading run when the mask starts with ones
    return [0] + lengths if flat[0] else lengths


def _run_lengths(flat: np.ndarray):
    if flat.size == 0:
        return
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield int(b - a)


def decode_mask_rle(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(np.prod(shape))
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0:
            raise FormatError("negative run length in mask encoding")
        flat[pos : pos + run] = value
        pos += run
        value = not value
    if pos != total:
        raise FormatError(f"mask run lengths cover {pos} cells, expected {total}")
    return flat.reshape(shape)


# ---------------------------------------------------------------------------
# .msk container

def _paths(path: str) -> tuple[str, str]:
    stem = path[:-4] if path.endswith(".msk") else path
    return stem + ".json", stem + ".cplx"


def save_grids(
    path: str,
    data: np.ndarray,
    masks: np.ndarray | None = None,
    *,
    content: str = "kspace",
    mask_kind: str = "full-interleave",
    b_value: float = 0.0,
    direction=(0.0, 0.0, 1.0),
    extra: dict | None = None,
) -> None:
    """Write a (J, H, N, M) complex stack as a .msk header/payload pair."""
    data = np.asarray(data, dtype=np.complex128)
    if data.ndim != 4:
        raise ValueError(f"expected a (J, H, N, M) stack, got shape {data.shape}")
    J, H, N, M = data.shape
    if masks is None:
        masks = np.ones((J, N, M), dtype=bool)
    masks = np.asarray(masks, dtype=bool)
    header = {
        "format": _MAGIC,
        "version": _VERSION,
        "content": content,
        "dims": {"shots": J, "channels": H, "rows": N, "cols": M},
        "dtype": "complex64",
        "endianness": "little",
        "b_value": float(b_value),
        "direction": [float(v) for v in direction],
        "mask_kind": mask_kind,
        "masks_rle": [encode_mask_rle(m) for m in masks],
    }
    if extra:
        header.update(extra)
    json_path, cplx_path = _paths(path)
    payload = np.ascontiguousarray(data.astype("<c8"))
    with open(json_path, "w") as fh:
        json.dump(header, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(cplx_path, "wb") as fh:
        fh.write(payload.tobytes())


def load_grids(path: str) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read a .msk pair; returns (data (J,H,N,M), masks (J,N,M), header)."""
    json_path, cplx_path = _paths(path)
    try:
        with open(json_path) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed header {json_path}: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != _MAGIC:
        raise FormatError(f"{json_path} is not an acquisition header")
    try:
        dims = header["dims"]
        J, H, N, M = (int(dims[k]) for k in ("shots", "channels", "rows", "cols"))
        dtype = header["dtype"]
        endian = header["endianness"]
        runs = header["masks_rle"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"missing or malformed header field: {exc}") from exc
    if dtype != "complex64" or endian != "little":
        raise FormatError(f"unsupported payload encoding {dtype}/{endian}")
    if len(runs) != J:
        raise FormatError(f"header lists {len(runs)} masks for {J} shots")
    with open(cplx_path, "rb") as fh:
        raw = fh.read()
    expected = J * H * N * M * 8
    if len(raw) != expected:
        raise FormatError(
            f"payload size mismatch: {len(raw)} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<c8").reshape(J, H, N, M).astype(np.complex128)
    if not np.all(np.isfinite(data.view(np.float64))):
        raise FormatError("NaN or Inf in payload")
    masks = np.stack([decode_mask_rle(r, (N, M)) for r in runs])
    return data, masks, header


def save_acquisition(acq: AcquisitionSet, path: str, extra: dict | None = None) -> None:
    save_grids(
        path,
        acq.kspace,
        acq.masks,
        content="kspace",
        mask_kind=acq.mask_kind,
        b_value=acq.b_value,
        direction=acq.direction,
        extra=extra,
    )


def load_acquisition(path: str) -> AcquisitionSet:
    data, masks, header = load_grids(path)
    kind = header.get("mask_kind", "full-interleave")
    # force non-acquired entries to exact zero (float32 round-trip keeps
    # acquired samples bit-exact; masking is the loader's responsibility)
    data = data * masks[:, None]
    try:
        return AcquisitionSet(
            kspace=data,
            masks=masks,
            mask_kind=kind,
            b_value=header.get("b_value", 0.0),
            direction=tuple(header.get("direction", (0.0, 0.0, 1.0))),
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_coilmaps(maps: np.ndarray, path: str, extra: dict | None = None) -> None:
    """Store coil maps in the same container, channels in the H slot, J=1."""
    maps = np.asarray(maps, dtype=np.complex128)
    save_grids(path, maps[None], content="coils", extra=extra)


def load_coilmaps(path: str) -> np.ndarray:
    data, _, header = load_grids(path)
    if header.get("content") != "coils":
        raise FormatError(f"{path} does not hold coil maps")
    maps = data[0]
    # restore sum_h |C_h|^2 = 1 exactly after the float32 round trip
    power = np.sum(np.abs(maps) ** 2, axis=0)
    scale = np.where(power > 0, np.sqrt(power), 1.0)
    return maps / scale


# ---------------------------------------------------------------------------
# normalization

def normalize_global(acq: AcquisitionSet) -> tuple[AcquisitionSet, float]:
    """Rescale k-space so the zero-filled combined image peaks at 1.

    The reference image is the root-sum-of-squares over channels of the
    shot-summed zero-filled reconstruction (the direct recon of the
    interleaved data). Returns the rescaled set and the applied factor, so
    callers can divide results by it to return to input units.
    """
    combined = idft_centered(acq.kspace.sum(axis=0))  # (H, N, M)
    peak = float(sos_combine(combined, axis=0).max())
    if peak == 0:
        raise ValueError("cannot normalize an all-zero acquisition")
    scale = 1.0 / peak
    return replace(acq, kspace=acq.kspace * scale), scale


# ---------------------------------------------------------------------------
# 8-bit grayscale export (PGM and PNG, both hand-packed so the files carry
# no library-dependent bytes; decoding is covered by an independent reader
# in the tests)

def export_grayscale(grid: np.ndarray, path: str, window=None, comment: str = "") -> None:
    """Quantize a real nonnegative image to 8 bits and write PGM or PNG.

    ``window`` is (lo, hi); values are clipped then mapped linearly so
    lo -> 0 and hi -> 255 with round-half-to-even (np.rint). Auto windowing
    (window=None) uses [0, 99.5th percentile]. The format follows the file
    extension: .pgm or .png.
    """
    img = np.asarray(grid, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if np.any(img < 0):
        raise ValueError("grayscale export expects a nonnegative image")
    if window is None:
        lo, hi = 0.0, float(np.percentile(img, 99.5))
    else:
        lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError(f"degenerate window [{lo}, {hi}]")
    quantized = np.rint(255.0 * (np.clip(img, lo, hi) - lo) / (hi - lo))
    data = quantized.astype(np.uint8)
    if path.endswith(".pgm"):
        _write_pgm(data, path, comment)
    elif path.endswith(".png"):
        _write_png(data, path, comment)
    else:
        raise ValueError(f"unsupported image extension on {path!r} (use .pgm or .png)")


def _write_pgm(data: np.ndarray, path: str, comment: str):
    rows, cols = data.shape
    head = f"P5\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{cols} {rows}\n255\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(data.tobytes())


def _png_chunk(tag: bytes, body: bytes) -> bytes:
    chunk = tag + body
    return struct.pack(">I", len(body)) + chunk + struct.pack(">I", zlib.crc32(chunk))


def _write_png(data: np.ndarray, path: str, comment: str):
    rows, cols = data.shape
    header = struct.pack(">IIBBBBB", cols, rows, 8, 0, 0, 0, 0)  # 8-bit grayscale
    raw = b"".join(b"\x00" + data[r].tobytes() for r in range(rows))
    chunks = [_png_chunk(b"IHDR", header)]
    if comment:
        chunks.append(_png_chunk(b"tEXt", b"Comment\x00" + comment.encode("latin-1")))
    chunks.append(_png_chunk(b"IDAT", zlib.compress(raw, 9)))
    chunks.append(_png_chunk(b"IEND", b""))
    with open(path, "wb") as fh:
        fh.write(b"\x89PNG\r\n\x1a\n")
        fh.writelines(chunks)
