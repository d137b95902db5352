"""Shared fixtures and the acceptance-summary terminal hook."""
import numpy as np
import pytest

from msdwi.sim import (
    MotionPhaseParams,
    background_phase,
    biot_savart_coils,
    make_interleave_masks,
    polynomial_shot_phase,
    shepp_logan,
    shot_phase_factors,
    synthesize_acquisition,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_sim(seed, N=32, M=32, shots=2, channels=4, snr_db=10.0, masks=None,
             mask_kind="full-interleave", floor=0.0):
    """Small end-to-end simulation bundle for solver and CLI tests.

    Returns (magnitude, coils, phase_factors, acquisition). `floor` lifts the
    phantom background so the magnitude is strictly positive when a test
    needs a well-defined phase everywhere.
    """
    gen = np.random.default_rng(seed)
    m = shepp_logan(N, M) + floor
    coils = biot_savart_coils(N, M, channels)
    params = MotionPhaseParams.draw(N, M, shots, gen)
    motion = np.stack([polynomial_shot_phase(params, j, N, M) for j in range(shots)])
    bg = background_phase(N, M, gen)
    phases = shot_phase_factors(motion, bg)
    if masks is None:
        masks = make_interleave_masks(N, M, shots)
    acq = synthesize_acquisition(m, coils, motion, bg, masks, snr_db, gen,
                                 mask_kind=mask_kind)
    return m, coils, phases, acq


@pytest.fixture
def small_sim():
    return make_sim(seed=7)


# one line per acceptance check, printed after the run so the verdicts are
# visible even when pytest captures stdout
ACCEPTANCE_LINES = []


def record_acceptance(index, name, ok, detail=""):
    mark = "PASS" if ok else "FAIL"
    line = f"acceptance {index:2d} {name}: {mark}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance checks")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
