"""Command-line front end: simulate, reconstruct, compare, score.

One JSON config document drives every subcommand; --set KEY=VALUE flags
override single entries by dotted path. Unknown keys are rejected. Every
output file embeds a hash of the canonicalized config, and re-running a
command with the same config and seed rewrites the same bytes (timing is
reported on stdout only, never in files, to keep outputs reproducible).

Exit codes: 0 success/converged, 2 stopped at the iteration cap,
3 diverged, 4 config error, 5 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import grids, metrics, recon, sim
from .operators import idft_centered, sos_combine

EXIT_OK = 0
EXIT_MAX_ITERS = 2
EXIT_DIVERGED = 3
EXIT_CONFIG = 4
EXIT_IO = 5

DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": ".",
    "sim": {
        "rows": 128,
        "cols": 128,
        "shots": 4,
        "channels": 8,
        "noise_snr_db": 10.0,  # null disables noise
        "b_value": 1000.0,
        "direction": [0.0, 0.0, 1.0],
        "diffusivity": 0.0,  # uniform ADC applied as exp(-b*D); 0 = no decay
        "tensor_decay": False,  # per-pixel decay from the synthetic tensor field
        "undersample": {"mode": "none", "rate": 1.0},
        "prefix": "sim",
    },
    "recon": {
        "input": "",
        "coils": "",
        "m0": "",  # magnitude grid for edge weights; "" = zero-filled fallback
        "frozen_phases": "",  # phase grid path; set to skip phase estimation
        "method": "PAIR",
        "lam": 1.0,
        "beta": 4e-4,
        "eta": 1.5,
        "eps_keep": 20,
        "sigma": 0.6,
        "radius": 2,
        "delta": 0.01,
        "max_iters": 1000,
        "tol": 1.0e-5,
        "prefix": "recon",
    },
    "compare": {
        "methods": ["PLRHM", "PHASE", "PAIR-TV", "PAIR"],
        "sweep": {"eps_keep": [], "sigma": []},
        "directions": [],  # >= 6 unit vectors switch on the tensor/AAE pipeline
        "prefix": "compare",
    },
    "metrics": {
        "ref": "",
        "test": "",
        "metric": "psnr",
        "prefix": "metrics",
    },
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _merge(base: dict, override: dict, path: str):
    for key, value in override.items():
        full = path + str(key)
        if key not in base:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {full!r} must be an object")
            _merge(base[key], value, full + ".")
        else:
            base[key] = value


def _parse_set(expr: str):
    key, sep, raw = expr.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    return key.strip(), value


def _apply_set(cfg: dict, dotted: str, value):
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(node[leaf], dict) and not isinstance(value, dict):
        raise ConfigError(f"config key {dotted!r} must be an object")
    node[leaf] = value


def load_config(config_path=None, overrides=(), seed=None, out_dir=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            with open(config_path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(cfg, doc, "")
    for expr in overrides:
        key, value = _parse_set(expr)
        _apply_set(cfg, key, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out_dir is not None:
        cfg["out_dir"] = str(out_dir)
    return cfg


def config_hash(cfg: dict) -> str:
    """Stable digest of the config document (output placement excluded)."""
    doc = {k: v for k, v in cfg.items() if k != "out_dir"}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _recon_config(cfg: dict) -> recon.ReconConfig:
    r = cfg["recon"]
    try:
        return recon.ReconConfig(
            method=str(r["method"]),
            lam=float(r["lam"]),
            beta=float(r["beta"]),
            eta=float(r["eta"]),
            eps_keep=int(r["eps_keep"]),
            sigma=float(r["sigma"]),
            radius=int(r["radius"]),
            delta=float(r["delta"]),
            max_iters=int(r["max_iters"]),
            tol=float(r["tol"]),
            seed=int(cfg["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid recon parameters: {exc}")


def _out(cfg: dict, name: str) -> str:
    out_dir = cfg["out_dir"] or "."
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _write_json(path: str, doc: dict):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# grid file helpers (magnitude and phase stacks reuse the .msk container)

def _save_magnitude(m: np.ndarray, path: str, h: str):
    grids.save_grids(path, np.asarray(m, dtype=np.complex128)[None, None],
                     content="magnitude", extra={"config_hash": h})


def _load_magnitude(path: str) -> np.ndarray:
    data, _, _ = grids.load_grids(path)
    return data[0, 0].real.copy()


def _save_phases(p: np.ndarray, path: str, h: str):
    grids.save_grids(path, np.asarray(p, dtype=np.complex128)[:, None],
                     content="phases", extra={"config_hash": h})


def _load_phases(path: str) -> np.ndarray:
    data, _, _ = grids.load_grids(path)
    factors = data[:, 0]
    mag = np.abs(factors)
    return np.where(mag > 0, factors / np.where(mag > 0, mag, 1.0), 1.0 + 0.0j)


# ---------------------------------------------------------------------------
# simulation pipeline

def _unit_direction(direction) -> np.ndarray:
    g = np.asarray([float(v) for v in direction], dtype=np.float64)
    if g.shape != (3,) or not np.isfinite(g).all():
        raise ConfigError(f"direction must be a finite 3-vector, got {direction!r}")
    norm = float(np.linalg.norm(g))
    if norm == 0:
        raise ConfigError("direction must be nonzero")
    return g / norm


def _decayed_magnitude(cfg: dict, phantom: np.ndarray, direction) -> np.ndarray:
    s = cfg["sim"]
    b = float(s["b_value"])
    if s["tensor_decay"]:
        if b <= 0:
            raise ConfigError("tensor_decay requires a positive b_value")
        field = sim.synthetic_tensor_field(*phantom.shape, support=phantom > 0)
        g = _unit_direction(direction)
        dmap = np.einsum("i,...ij,j->...", g, field, g)
        return sim.diffusion_decay(phantom, b, dmap)
    if float(s["diffusivity"]) > 0:
        return sim.diffusion_decay(phantom, b, float(s["diffusivity"]))
    return phantom


def _make_masks(cfg: dict):
    s = cfg["sim"]
    N, M, J = int(s["rows"]), int(s["cols"]), int(s["shots"])
    masks = sim.make_interleave_masks(N, M, J)
    mode = s["undersample"]["mode"]
    if mode == "none":
        return masks, "full-interleave"
    if mode not in ("uniform", "partial-fourier"):
        raise ConfigError(f"unknown undersample mode {mode!r}")
    masks = sim.retrospective_undersample(masks, mode, float(s["undersample"]["rate"]))
    return masks, ("uniform-undersampled" if mode == "uniform" else "partial-fourier")


def _synthesize(cfg: dict, magnitude, coils, masks, mask_kind, rng, direction):
    """Draw fresh shot phases and noise, run the forward model."""
    s = cfg["sim"]
    N, M, J = int(s["rows"]), int(s["cols"]), int(s["shots"])
    params = sim.MotionPhaseParams.draw(N, M, J, rng)
    motion = np.stack([sim.polynomial_shot_phase(params, j, N, M) for j in range(J)])
    background = sim.background_phase(N, M, rng)
    snr = s["noise_snr_db"]
    acq = sim.synthesize_acquisition(
        magnitude, coils, motion, background, masks,
        None if snr is None else float(snr), rng,
        mask_kind=mask_kind, b_value=float(s["b_value"]),
        direction=tuple(_unit_direction(direction)),
    )
    factors = sim.shot_phase_factors(motion, background)
    return acq, factors, params


def cmd_simulate(cfg: dict) -> int:
    h = config_hash(cfg)
    s = cfg["sim"]
    N, M, H = int(s["rows"]), int(s["cols"]), int(s["channels"])
    rng = np.random.default_rng(int(cfg["seed"]))
    phantom = sim.shepp_logan(N, M)
    magnitude = _decayed_magnitude(cfg, phantom, s["direction"])
    coils = sim.biot_savart_coils(N, M, H)
    masks, mask_kind = _make_masks(cfg)
    acq, factors, params = _synthesize(cfg, magnitude, coils, masks, mask_kind, rng, s["direction"])

    prefix = s["prefix"]
    acq_path = _out(cfg, f"{prefix}_acq.msk")
    coil_path = _out(cfg, f"{prefix}_coils.msk")
    truth_m_path = _out(cfg, f"{prefix}_truth_m.msk")
    truth_p_path = _out(cfg, f"{prefix}_truth_phases.msk")
    grids.save_acquisition(acq, acq_path, extra={"config_hash": h, "seed": int(cfg["seed"])})
    grids.save_coilmaps(coils, coil_path, extra={"config_hash": h})
    _save_magnitude(magnitude, truth_m_path, h)
    _save_phases(factors, truth_p_path, h)

    shot_lines = [sorted(int(c) for c in np.flatnonzero(m.any(axis=0))) for m in acq.masks]
    manifest = {
        "command": "simulate",
        "config": {k: v for k, v in cfg.items() if k != "out_dir"},
        "config_hash": h,
        "seed": int(cfg["seed"]),
        "files": {
            "acquisition": os.path.basename(acq_path),
            "coils": os.path.basename(coil_path),
            "truth_magnitude": os.path.basename(truth_m_path),
            "truth_phases": os.path.basename(truth_p_path),
        },
        "mask_kind": mask_kind,
        "shot_lines": shot_lines,
        "phase_coefficients": params.coeffs.tolist(),
    }
    manifest_path = _out(cfg, f"{prefix}_manifest.json")
    _write_json(manifest_path, manifest)
    print(f"simulate: wrote {manifest_path} (config {h[:12]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reconstruction

def _run_recon(acq, coils, rcfg, m0=None, frozen_phases=None):
    """Normalize, reconstruct, undo the normalization on the magnitude."""
    norm_acq, scale = grids.normalize_global(acq)
    result = recon.reconstruct(norm_acq, coils, rcfg, m0=m0, frozen_phases=frozen_phases)
    return replace(result, magnitude=result.magnitude / scale), scale


def cmd_recon(cfg: dict) -> int:
    h = config_hash(cfg)
    r = cfg["recon"]
    if not r["input"] or not r["coils"]:
        raise ConfigError("recon.input and recon.coils are required")
    rcfg = _recon_config(cfg)
    acq = grids.load_acquisition(r["input"])
    coils = grids.load_coilmaps(r["coils"])
    m0 = _load_magnitude(r["m0"]) if r["m0"] else None
    frozen = _load_phases(r["frozen_phases"]) if r["frozen_phases"] else None
    if m0 is None and rcfg.method == "PAIR" and rcfg.beta > 0:
        # no reference image given: fall back to the zero-filled SOS image
        shots0 = np.sum(np.conj(coils)[None] * idft_centered(acq.kspace), axis=1)
        m0 = sos_combine(shots0, axis=0)

    result, scale = _run_recon(acq, coils, rcfg, m0=m0, frozen_phases=frozen)

    prefix = r["prefix"]
    m_path = _out(cfg, f"{prefix}_m.msk")
    p_path = _out(cfg, f"{prefix}_phases.msk")
    _save_magnitude(result.magnitude, m_path, h)
    _save_phases(result.phases, p_path, h)
    grids.export_grayscale(result.magnitude, _out(cfg, f"{prefix}_m.png"),
                           comment=f"config {h}")
    trace = {
        "command": "recon",
        "config_hash": h,
        "method": rcfg.method,
        "iterations": result.iterations,
        "converged": result.converged,
        "normalization_scale": scale,
        "trace": result.trace(),
    }
    trace_path = _out(cfg, f"{prefix}_trace.json")
    _write_json(trace_path, trace)
    status = "converged" if result.converged else "hit the iteration cap"
    print(f"recon: {rcfg.method} {status} after {result.iterations} iterations "
          f"({result.wall_seconds:.1f}s), wrote {trace_path}")
    return EXIT_OK if result.converged else EXIT_MAX_ITERS


# ---------------------------------------------------------------------------
# method comparison

def _method_row(method, result, psnr_db):
    row = {
        "method": method,
        "eps_keep": result.config.eps_keep,
        "sigma": result.config.sigma,
        "psnr_db": psnr_db,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    return row


def cmd_compare(cfg: dict) -> int:
    h = config_hash(cfg)
    c = cfg["compare"]
    s = cfg["sim"]
    methods = list(c["methods"])
    for m in methods:
        if m not in recon.METHODS:
            raise ConfigError(f"unknown method {m!r} in compare.methods")
    rng = np.random.default_rng(int(cfg["seed"]))
    N, M, H = int(s["rows"]), int(s["cols"]), int(s["channels"])
    phantom = sim.shepp_logan(N, M)
    magnitude = _decayed_magnitude(cfg, phantom, s["direction"])
    coils = sim.biot_savart_coils(N, M, H)
    masks, mask_kind = _make_masks(cfg)
    acq, _, _ = _synthesize(cfg, magnitude, coils, masks, mask_kind, rng, s["direction"])
    base = _recon_config(cfg)

    directions = [_unit_direction(g) for g in c["directions"]]
    dir_acqs = []
    ref_field = None
    if directions:
        if len(directions) < 6:
            raise ConfigError("the direction pipeline needs at least 6 directions")
        if float(s["b_value"]) <= 0:
            raise ConfigError("the direction pipeline needs a positive b_value")
        field = sim.synthetic_tensor_field(N, M, support=phantom > 0)
        ref_field = metrics.primary_direction(field, valid=phantom > 0)
        for g in directions:
            dmap = np.einsum("i,...ij,j->...", g, field, g)
            mag_g = sim.diffusion_decay(phantom, float(s["b_value"]), dmap)
            acq_g, _, _ = _synthesize(cfg, mag_g, coils, masks, mask_kind, rng, g)
            dir_acqs.append(acq_g)

    rows = []
    any_cap = False
    for method in methods:
        rcfg = replace(base, method=method)
        result, _ = _run_recon(acq, coils, rcfg, m0=magnitude)
        row = _method_row(method, result, metrics.psnr(magnitude, result.magnitude))
        any_cap = any_cap or not result.converged
        if directions:
            stack = []
            for acq_g in dir_acqs:
                res_g, _ = _run_recon(acq_g, coils, rcfg, m0=phantom)
                any_cap = any_cap or not res_g.converged
                stack.append(res_g.magnitude)
            bvals = np.full(len(directions), float(s["b_value"]))
            tensors, valid = metrics.fit_tensor(
                np.stack(stack), bvals, np.stack(directions), phantom)
            test_field = metrics.primary_direction(tensors, valid)
            row["aae_deg"] = metrics.aae(ref_field, test_field)
        rows.append(row)
        note = f"psnr {row['psnr_db']:.2f} dB"
        if "aae_deg" in row:
            note += f", aae {row['aae_deg']:.2f} deg"
        print(f"compare: {method} {note}, {result.iterations} iterations "
              f"({result.wall_seconds:.1f}s)")
    rows.sort(key=lambda r: r["psnr_db"])

    sweep_rows = []
    for eps in c["sweep"]["eps_keep"]:
        for sig in c["sweep"]["sigma"]:
            rcfg = replace(base, method="PAIR", eps_keep=int(eps), sigma=float(sig))
            result, _ = _run_recon(acq, coils, rcfg, m0=magnitude)
            any_cap = any_cap or not result.converged
            sweep_rows.append(_method_row("PAIR", result, metrics.psnr(magnitude, result.magnitude)))
    sweep_rows.sort(key=lambda r: (r["eps_keep"], r["sigma"]))

    prefix = c["prefix"]
    report = {
        "command": "compare",
        "config_hash": h,
        "seed": int(cfg["seed"]),
        "grid": [N, M],
        "shots": int(s["shots"]),
        "channels": H,
        "noise_snr_db": s["noise_snr_db"],
        "rows": rows,
        "sweep": sweep_rows,
    }
    json_path = _out(cfg, f"{prefix}_report.json")
    _write_json(json_path, report)
    csv_path = _out(cfg, f"{prefix}_report.csv")
    fields = ["section", "method", "eps_keep", "sigma", "psnr_db", "aae_deg",
              "iterations", "converged"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({"section": "methods", **row})
        for row in sweep_rows:
            writer.writerow({"section": "sweep", **row})
    print(f"compare: wrote {json_path}")
    return EXIT_MAX_ITERS if any_cap else EXIT_OK


# ---------------------------------------------------------------------------
# standalone metrics

def cmd_metrics(cfg: dict) -> int:
    h = config_hash(cfg)
    m = cfg["metrics"]
    if m["metric"] != "psnr":
        raise ConfigError(f"unsupported metric {m['metric']!r} (only 'psnr')")
    if not m["ref"] or not m["test"]:
        raise ConfigError("metrics.ref and metrics.test are required")
    ref = _load_magnitude(m["ref"])
    test = _load_magnitude(m["test"])
    value = metrics.psnr(ref, test)
    doc = {
        "metric": "psnr",
        "value": value if np.isfinite(value) else None,
        "identical": not np.isfinite(value),
        "config_hash": h,
    }
    path = _out(cfg, f"{m['prefix']}.json")
    _write_json(path, doc)
    print(f"metrics: psnr {value:.4f} dB, wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "simulate": cmd_simulate,
    "recon": cmd_recon,
    "compare": cmd_compare,
    "metrics": cmd_metrics,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msdwi",
        description="Multi-shot DWI simulation, reconstruction, and scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate a phantom acquisition with ground truth"),
        ("recon", "reconstruct magnitude and shot phases from an acquisition"),
        ("compare", "run several methods on one simulation and tabulate scores"),
        ("metrics", "score one stored image against a reference"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults apply otherwise)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry by dotted path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="directory for output files")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out_dir)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except recon.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (grids.FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
