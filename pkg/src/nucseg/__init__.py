"""Color-space based nuclei instance segmentation pipeline.

Library layout:

- :mod:`nucseg.types` -- shared raster/label types
- :mod:`nucseg.npyio` -- NPY container I/O and dataset access
- :mod:`nucseg.preprocess` -- CLAHE and multi-color-space stacking
- :mod:`nucseg.augment` -- seeded label-consistent augmentation
- :mod:`nucseg.hover` -- offset target maps and watershed post-processing
- :mod:`nucseg.metrics` -- panoptic-quality evaluation
- :mod:`nucseg.losses` -- loss kernels with analytic gradients
- :mod:`nucseg.sam` -- sharpness-aware minimization
- :mod:`nucseg.cli` -- batch command-line frontend
"""

from .types import (
    CLASS_NAMES,
    ClassMap,
    HoVerMaps,
    InstanceMap,
    MultiChannelImage,
    merge_channels,
    split_channels,
)
from .npyio import DatasetHandle, NpyHeader, load_dataset, read_npy, write_npy
from .preprocess import ClaheParams, StackConfig, clahe_plane, extract_plane, preprocess_tile
from .augment import AugmentConfig, AugmentParams, Sample, apply, sample_params
from .hover import (
    PostprocParams,
    PredictionMaps,
    label_components,
    make_targets,
    postprocess,
    sobel_plane,
)
from .metrics import (
    EvalReport,
    MatchResult,
    PQStats,
    accumulate_pq,
    match_instances,
    merge_stats,
    report,
)
from .losses import (
    CompositeWeights,
    HvInput,
    LossInput,
    LossResult,
    UflParams,
    asym_focal_loss,
    asym_focal_tversky_loss,
    composite_loss,
    dice_loss,
    hv_loss,
    unified_focal_loss,
)
from .sam import Objective, SamConfig, optimize, sam_step

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "ClassMap",
    "HoVerMaps",
    "InstanceMap",
    "MultiChannelImage",
    "merge_channels",
    "split_channels",
    "DatasetHandle",
    "NpyHeader",
    "load_dataset",
    "read_npy",
    "write_npy",
    "ClaheParams",
    "StackConfig",
    "clahe_plane",
    "extract_plane",
    "preprocess_tile",
    "AugmentConfig",
    "AugmentParams",
    "Sample",
    "apply",
    "sample_params",
    "PostprocParams",
    "PredictionMaps",
    "label_components",
    "make_targets",
    "postprocess",
    "sobel_plane",
    "EvalReport",
    "MatchResult",
    "PQStats",
    "accumulate_pq",
    "match_instances",
    "merge_stats",
    "report",
    "CompositeWeights",
    "HvInput",
    "LossInput",
    "LossResult",
    "UflParams",
    "asym_focal_loss",
    "asym_focal_tversky_loss",
    "composite_loss",
    "dice_loss",
    "hv_loss",
    "unified_focal_loss",
    "Objective",
    "SamConfig",
    "optimize",
    "sam_step",
]
