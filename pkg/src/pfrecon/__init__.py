"""Partial-Fourier MRI reconstruction toolkit.

Classical reconstructions (zero-filling, homodyne, POCS) and a
recurrent unrolled network that reconstructs repeated acquisitions
jointly, plus synthetic phantom generation, training, and evaluation
utilities.
"""

from pfrecon.classical import (
    PhaseEstimate,
    conjugate_symmetry_oracle,
    homodyne,
    homodyne_weights,
    lowres_phase,
    pocs,
    zero_fill,
)
from pfrecon.core import (
    KSpaceData,
    RepetitionSet,
    SamplingMask,
    UnsupportedFactorError,
    as_pff,
    conj_mirror_indices,
    data_consistency,
    fft2c,
    forward,
    ifft2c,
    make_pf_mask,
)
from pfrecon.evaluate import (
    EvalRecord,
    emit_figures,
    evaluate,
    max_freq_histogram,
    pe_max_frequency,
    summarize,
    write_metrics_csv,
)
from pfrecon.metrics import psnr, ssim
from pfrecon.network import (
    UnrolledNet,
    count_params,
    drpf_forward,
    load_checkpoint,
    replicate_base,
    save_checkpoint,
    unrolled_variant_forward,
)
from pfrecon.synthdata import (
    DatasetFormatError,
    PhantomSpec,
    generate_dataset,
    generate_phantom,
    inject_void,
    read_dataset,
    write_dataset,
)
from pfrecon.training import (
    LossBreakdown,
    TrainConfig,
    TrainingDiverged,
    loss,
    magnitude_average,
    normalize_set,
    train,
    train_two_stage,
)

__all__ = [
    "DatasetFormatError",
    "EvalRecord",
    "KSpaceData",
    "LossBreakdown",
    "PhantomSpec",
    "PhaseEstimate",
    "RepetitionSet",
    "SamplingMask",
    "TrainConfig",
    "TrainingDiverged",
    "UnrolledNet",
    "UnsupportedFactorError",
    "as_pff",
    "conj_mirror_indices",
    "conjugate_symmetry_oracle",
    "count_params",
    "data_consistency",
    "drpf_forward",
    "emit_figures",
    "evaluate",
    "fft2c",
    "forward",
    "generate_dataset",
    "generate_phantom",
    "homodyne",
    "homodyne_weights",
    "ifft2c",
    "inject_void",
    "load_checkpoint",
    "loss",
    "lowres_phase",
    "magnitude_average",
    "make_pf_mask",
    "max_freq_histogram",
    "normalize_set",
    "pe_max_frequency",
    "pocs",
    "psnr",
    "read_dataset",
    "replicate_base",
    "save_checkpoint",
    "ssim",
    "summarize",
    "train",
    "train_two_stage",
    "unrolled_variant_forward",
    "write_dataset",
    "write_metrics_csv",
    "zero_fill",
]

__version__ = "0.1.0"
