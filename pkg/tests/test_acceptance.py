"""End-to-end acceptance checks for the reconstruction pipeline.

Each check records one verdict line (see conftest.pytest_terminal_summary) so
the full scorecard is visible at the end of a run. The bounds are fixed
contract values and are asserted as-is; checks 3, 4, and the uniform arm of 9
currently fail because the pinned phase-support construction cannot reach
them (analysis in the project notes kept outside the package). They are left
failing on purpose rather than loosening the bounds.
"""
import numpy as np
import pytest

from conftest import record_acceptance
from msdwi.grids import AcquisitionSet, normalize_global
from msdwi.lifting import lift, phase_support_vector, support_points, svt, unlift
from msdwi.metrics import DirectionField, aae, fit_tensor, psnr
from msdwi.operators import apply_adjoint, apply_forward, dft_centered, idft_centered
from msdwi.recon import (
    ReconConfig,
    data_consistency_step,
    magnitude_update_step,
    phase_update_step,
    reconstruct,
)
from msdwi.sim import (
    MotionPhaseParams,
    background_phase,
    biot_savart_coils,
    make_interleave_masks,
    polynomial_shot_phase,
    retrospective_undersample,
    shepp_logan,
    shot_phase_factors,
    synthesize_acquisition,
    synthetic_tensor_field,
)
from msdwi.wtv import EdgeWeights, wtv_subgradient, wtv_value

N = M = 128
CHANNELS = 8
SNR_DB = 10.0
SEEDS = range(10)
METHODS = ("PLRHM", "PHASE", "PAIR-TV", "PAIR")


def simulate(seed, shots=4, snr=SNR_DB):
    gen = np.random.default_rng(seed)
    m = shepp_logan(N, M)
    coils = biot_savart_coils(N, M, CHANNELS)
    params = MotionPhaseParams.draw(N, M, shots, gen)
    motion = np.stack([polynomial_shot_phase(params, j, N, M) for j in range(shots)])
    bg = background_phase(N, M, gen)
    phases = shot_phase_factors(motion, bg)
    masks = make_interleave_masks(N, M, shots)
    acq = synthesize_acquisition(m, coils, motion, bg, masks, snr, gen)
    return m, coils, phases, acq


def run_recon(m_true, coils, acq, frozen=None, **overrides):
    # edge weights come from the clean reference image, matching the
    # shipped compare pipeline (the b=0 image in an in vivo protocol)
    cfg = ReconConfig(**overrides)
    acq_n, scale = normalize_global(acq)
    result = reconstruct(acq_n, coils, cfg, m0=m_true, frozen_phases=frozen)
    return psnr(m_true, result.magnitude / scale), result


@pytest.fixture(scope="module")
def method_matrix():
    """PSNR of every method on ten seeded 4-shot simulations, plus the
    frozen-true-phase companion runs and the seed-0 bundle for reuse."""
    table = {meth: [] for meth in METHODS}
    frozen_gap = []
    seed0 = None
    wall = 0.0
    for seed in SEEDS:
        m, coils, phases, acq = simulate(seed)
        for meth in METHODS:
            p, res = run_recon(m, coils, acq, method=meth)
            table[meth].append(p)
            wall += res.wall_seconds
            if seed == 0 and meth == "PAIR":
                seed0 = {"m": m, "coils": coils, "phases": phases, "acq": acq,
                         "psnr": p, "result": res}
        p_frozen, _ = run_recon(m, coils, acq, frozen=phases)
        frozen_gap.append(p_frozen - table["PAIR"][-1])
    return {"psnr": table, "frozen_gap": frozen_gap, "wall": wall, "seed0": seed0}


def test_method_ordering_across_seeds(method_matrix):
    """PAIR > PAIR-TV > PHASE > PLRHM on >= 8 of 10 seeds, median PAIR-PHASE
    gap >= 1 dB, matrix under the five-minute budget."""
    tab = method_matrix["psnr"]
    ordered = sum(
        tab["PAIR"][s] > tab["PAIR-TV"][s] > tab["PHASE"][s] > tab["PLRHM"][s]
        for s in SEEDS
    )
    gap = float(np.median(np.array(tab["PAIR"]) - np.array(tab["PHASE"])))
    wall = method_matrix["wall"]
    ok = ordered >= 8 and gap >= 1.0 and wall < 300.0
    record_acceptance(1, "method ordering", ok,
                      f"{ordered}/10 ordered, median gap {gap:.2f} dB, {wall:.0f}s")
    assert ordered >= 8
    assert gap >= 1.0
    assert wall < 300.0


def test_true_phase_never_beats_estimated_by_less(method_matrix):
    """Freezing the phases at the simulated truth must not lose more than
    0.1 dB against the estimated-phase run on any seed."""
    worst = min(method_matrix["frozen_gap"])
    ok = worst >= -0.1
    record_acceptance(2, "frozen true phases", ok, f"worst margin {worst:+.2f} dB")
    assert worst >= -0.1


def test_eight_shot_feasibility(method_matrix):
    """8-shot run stops on tolerance within 1000 iterations and lands within
    3 dB of the 4-shot run at the same noise level."""
    m, coils, _, acq8 = simulate(0, shots=8)
    p8, res8 = run_recon(m, coils, acq8)
    p4 = method_matrix["seed0"]["psnr"]
    ok = res8.converged and res8.iterations <= 1000 and (p4 - p8) <= 3.0
    record_acceptance(3, "8-shot feasibility", ok,
                      f"4-shot {p4:.2f} dB, 8-shot {p8:.2f} dB in {res8.iterations} it")
    assert res8.converged and res8.iterations <= 1000
    assert p4 - p8 <= 3.0


def test_parameter_insensitivity_grid(method_matrix):
    """PSNR spread over eps_keep x sigma grid stays within 1.5 dB."""
    s0 = method_matrix["seed0"]
    values = []
    for eps in (20, 25, 30):
        for sig in (0.3, 0.6, 0.9):
            p, _ = run_recon(s0["m"], s0["coils"], s0["acq"],
                             eps_keep=eps, sigma=sig)
            values.append(p)
    spread = max(values) - min(values)
    ok = spread <= 1.5
    record_acceptance(4, "parameter insensitivity", ok,
                      f"grid spread {spread:.2f} dB over 9 settings")
    assert spread <= 1.5


def test_annihilation_of_in_support_phases():
    """Images whose phase spectrum sits inside the support disk lift to a
    rank-deficient matrix annihilated by the stacked phase vector."""
    region = support_points(2)
    m = shepp_logan(64, 64)
    x = np.arange(64)[:, None]
    y = np.arange(64)[None, :]
    worst_sv = 0.0
    worst_resid = 0.0
    for k, l, c in ((0, 0, 0.7), (0, 2, -0.4), (-1, 1, 1.1)):
        phase = np.exp(1j * (c + 2 * np.pi * (k * x + l * y) / 64))
        lifted = lift(dft_centered(phase * m), region)
        s = np.linalg.svd(lifted.matrix, compute_uv=False)
        worst_sv = max(worst_sv, s[-1] / s[0])
        v = phase_support_vector(dft_centered(phase), region)
        v = v / np.linalg.norm(v)
        worst_resid = max(worst_resid, np.linalg.norm(v @ lifted.matrix) / s[0])
    ok = worst_sv <= 1e-8 and worst_resid <= 1e-8
    record_acceptance(5, "annihilation property", ok,
                      f"sv ratio {worst_sv:.1e}, residual {worst_resid:.1e}")
    assert worst_sv <= 1e-8
    assert worst_resid <= 1e-8


def test_operator_correctness():
    """Adjoint identities, exact unlift-of-lift inversion, and the dense
    thresholding oracle."""
    gen = np.random.default_rng(99)
    shape = (16, 16)
    coil = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    phase = np.exp(1j * gen.uniform(-np.pi, np.pi, shape))
    mask = (gen.uniform(size=shape) < 0.5).astype(float)

    worst = 0.0
    for _ in range(100):
        x = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
        y = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
        lhs = np.vdot(y, dft_centered(x))
        rhs = np.vdot(idft_centered(y), x)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
        lhs = np.vdot(y, apply_forward(x, phase, coil, mask))
        rhs = np.vdot(apply_adjoint(y, phase, coil, mask), x)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    adjoint_ok = worst <= 1e-10

    region = support_points(2)
    ktilde = gen.standard_normal((24, 24)) + 1j * gen.standard_normal((24, 24))
    round_trip = unlift(lift(ktilde, region))
    unlift_err = np.max(np.abs(round_trip - ktilde)) / np.max(np.abs(ktilde))
    unlift_ok = unlift_err <= 1e-12

    svt_worst = 0.0
    for _ in range(20):
        A = gen.standard_normal((20, 30))
        u, s, vt = np.linalg.svd(A, full_matrices=False)
        shrunk = s.copy()
        shrunk[3:] = np.maximum(s[3:] - 0.8, 0.0)
        oracle = (u * shrunk) @ vt
        got = svt(A, 3, 0.8)
        svt_worst = max(svt_worst, np.max(np.abs(got - oracle)) / s[0])
    svt_ok = svt_worst <= 1e-10

    ok = adjoint_ok and unlift_ok and svt_ok
    record_acceptance(6, "operator correctness", ok,
                      f"adjoint {worst:.1e}, unlift {unlift_err:.1e}, svt {svt_worst:.1e}")
    assert adjoint_ok
    assert unlift_ok
    assert svt_ok


def test_weighted_tv_gradient_check():
    """Analytic subgradient against central finite differences."""
    gen = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        img = gen.uniform(0.1, 1.0, (16, 16))
        w = EdgeWeights(gen.uniform(0.2, 1.0, (16, 16)), gen.uniform(0.2, 1.0, (16, 16)))
        grad = wtv_subgradient(img, w)
        h = 1e-6
        fd = np.zeros_like(img)
        for i in range(16):
            for j in range(16):
                up = img.copy()
                dn = img.copy()
                up[i, j] += h
                dn[i, j] -= h
                fd[i, j] = (wtv_value(up, w) - wtv_value(dn, w)) / (2 * h)
        worst = max(worst, np.max(np.abs(grad - fd)) / np.max(np.abs(fd)))
    ok = worst <= 1e-4
    record_acceptance(7, "TV gradient check", ok, f"max rel err {worst:.1e}")
    assert worst <= 1e-4


def test_fixed_point_of_consistent_data():
    """From the exact (magnitude, phases) of noiseless fully sampled data
    with in-support phases, one full iteration moves nothing."""
    shots = 4
    gen = np.random.default_rng(3)
    m = shepp_logan(N, M) + 0.05  # strictly positive so phases are defined
    coils = biot_savart_coils(N, M, CHANNELS)
    # constant per-shot phases: the only unit-modulus family whose lifted
    # rank (13) stays inside the kept subspace, so the projection is a no-op
    theta = np.array([0.0, 0.9, -0.5, 2.2])[:, None, None] * np.ones((1, N, M))
    masks = make_interleave_masks(N, M, shots)
    acq = synthesize_acquisition(m, coils, -theta, np.zeros((N, M)), masks, None, gen)
    phases = np.exp(1j * theta)

    region = support_points(2)
    images = data_consistency_step(m, phases, acq, coils, lam=1.0)
    new_phases, projected = phase_update_step(images, region, 20, 0.6)
    new_m = magnitude_update_step(m, new_phases, projected,
                                  EdgeWeights.ones((N, M)), 0.0, 1.5)
    dm = np.linalg.norm(new_m - m) / np.linalg.norm(m)
    dp = np.linalg.norm(new_phases - phases) / np.linalg.norm(phases)
    ok = dm <= 1e-6 and dp <= 1e-6
    record_acceptance(8, "fixed point", ok, f"dm {dm:.1e}, dP {dp:.1e}")
    assert dm <= 1e-6
    assert dp <= 1e-6


def test_undersampling_robustness(method_matrix):
    """Dropping to uniform rate 0.5 or partial-Fourier 0.6 retrospectively
    costs at most 3 dB against the fully sampled reconstruction."""
    s0 = method_matrix["seed0"]
    losses = {}
    for mode, rate, kind in (("uniform", 0.5, "uniform-undersampled"),
                             ("partial-fourier", 0.6, "partial-fourier")):
        masks_u = retrospective_undersample(s0["acq"].masks, mode, rate)
        acq_u = AcquisitionSet(
            kspace=s0["acq"].kspace * masks_u[:, None],
            masks=masks_u,
            mask_kind=kind,
        )
        p, _ = run_recon(s0["m"], s0["coils"], acq_u)
        losses[mode] = s0["psnr"] - p
    ok = all(loss <= 3.0 for loss in losses.values())
    record_acceptance(
        9, "undersampling robustness", ok,
        f"uniform {losses['uniform']:+.2f} dB, partial {losses['partial-fourier']:+.2f} dB")
    assert losses["partial-fourier"] <= 3.0
    assert losses["uniform"] <= 3.0


def test_convergence_discipline(method_matrix):
    """Default runs stop on tolerance before 300 iterations and the relative
    change is monotone over the last 10 recorded entries."""
    res = method_matrix["seed0"]["result"]
    tail = np.array(res.rel_change[-10:])
    monotone = bool(np.all(np.diff(tail) <= 0))
    ok = res.converged and res.iterations < 300 and monotone
    record_acceptance(10, "convergence discipline", ok,
                      f"{res.iterations} iterations, monotone tail {monotone}")
    assert res.converged
    assert res.iterations < 300
    assert monotone


def test_metric_exactness():
    """Crafted PSNR and angular-error cases hit their closed-form values and
    the tensor fit inverts its own forward model."""
    ref = np.zeros((10, 10))
    ref[4, 4] = 1.0
    got = psnr(ref, ref + 0.1)
    psnr_ok = abs(got - 20.0) <= 1e-9

    vecs_ref = np.zeros((4, 4, 3))
    vecs_ref[..., 2] = 1.0
    vecs_test = np.zeros((4, 4, 3))
    vecs_test[..., 1] = vecs_test[..., 2] = 1.0 / np.sqrt(2.0)
    angle = aae(DirectionField(vecs_ref, np.ones((4, 4), bool)),
                DirectionField(vecs_test, np.ones((4, 4), bool)))
    aae_ok = abs(angle - 45.0) <= 1e-9

    tensors = synthetic_tensor_field(12, 12)
    dirs = np.array([
        [1, 0, 0], [0, 1, 0], [0, 0, 1],
        [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, -1, 0], [0, 1, -1],
    ], dtype=float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    b = 1000.0
    b0 = np.full((12, 12), 2.0)
    expo = np.einsum("ki,nmij,kj->knm", dirs, tensors, dirs)
    dwis = b0[None] * np.exp(-b * expo)
    fitted, valid = fit_tensor(dwis, np.full(len(dirs), b), dirs, b0)
    fit_err = np.max(np.abs(fitted[valid] - tensors[valid]))
    fit_ok = valid.all() and fit_err <= 1e-6

    ok = psnr_ok and aae_ok and fit_ok
    record_acceptance(11, "metric exactness", ok,
                      f"psnr {got:.12f}, aae {angle:.12f}, tensor err {fit_err:.1e}")
    assert psnr_ok
    assert aae_ok
    assert fit_ok
