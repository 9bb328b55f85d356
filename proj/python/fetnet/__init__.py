"""Frequency-enhanced transformer segmentation toolkit (C++ core)."""

from ._core import (
    DivergedError,
    IoError,
    NumericError,
    SegmentationModel,
    dsc,
    dwt2,
    efficient_attention,
    gen_synth,
    hausdorff,
    hf_energy_ratio,
    idwt2,
    make_sample,
    op_gradchecks,
    power_spectrum,
    read_ften,
    standard_mhsa,
    train,
    write_ften,
)

__all__ = [
    "DivergedError",
    "IoError",
    "NumericError",
    "SegmentationModel",
    "dsc",
    "dwt2",
    "efficient_attention",
    "gen_synth",
    "hausdorff",
    "hf_energy_ratio",
    "idwt2",
    "make_sample",
    "op_gradchecks",
    "power_spectrum",
    "read_ften",
    "standard_mhsa",
    "train",
    "write_ften",
]
