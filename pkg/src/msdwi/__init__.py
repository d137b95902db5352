"""Multi-shot interleaved DWI reconstruction toolkit.

Simulates interleaved diffusion-weighted acquisitions, reconstructs them
with explicit phase-and-magnitude solvers (low-rank smooth-phase prior
plus edge-weighted total variation), and scores the results.
"""

import os as _os

# honor the thread cap before numpy first configures its BLAS backend;
# effective only if numpy has not been imported by the host process yet
_threads = _os.environ.get("MSDWI_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .grids import (
    MASK_KINDS,
    AcquisitionSet,
    FormatError,
    decode_mask_rle,
    encode_mask_rle,
    export_grayscale,
    load_acquisition,
    load_coilmaps,
    load_grids,
    normalize_global,
    save_acquisition,
    save_coilmaps,
    save_grids,
)
from .lifting import (
    LiftedMatrix,
    SupportRegion,
    lift,
    lowrank_project,
    phase_support_vector,
    support_points,
    svt,
    unlift,
)
from .metrics import DirectionField, aae, fit_tensor, primary_direction, psnr
from .operators import (
    apply_adjoint,
    apply_forward,
    coil_combine,
    dft_centered,
    idft_centered,
    sos_combine,
)
from .recon import (
    METHODS,
    DivergenceError,
    ReconConfig,
    ReconResult,
    check_convergence,
    data_consistency_step,
    magnitude_update_step,
    pair_reconstruct,
    phase_only_reconstruct,
    phase_update_step,
    plrhm_reconstruct,
    reconstruct,
)
from .sim import (
    SHEPP_LOGAN_ELLIPSES,
    CoilGeometry,
    MotionPhaseParams,
    background_phase,
    biot_savart_coils,
    diffusion_decay,
    make_interleave_masks,
    polynomial_shot_phase,
    retrospective_undersample,
    shepp_logan,
    shot_phase_factors,
    synthesize_acquisition,
    synthetic_tensor_field,
)
from .wtv import EdgeWeights, compute_weights, wtv_subgradient, wtv_value

__version__ = "0.1.0"
