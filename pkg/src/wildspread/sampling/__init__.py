"""Point-of-interest sampling and the zip sample store."""

from .patches import PATCH_SIZE, PatchError, extract_mask, extract_patch, pad_channels, patches_from_padded
from .rng import RNG_NAME, CounterRNG, numpy_generator
from .samples import (
    MaskSample,
    Sample,
    SamplingError,
    dihedral,
    dihedral_variants,
    draw_pois,
    rotate_bearing,
    sample_archive,
    sample_mask_scheme,
    sample_pois,
)
from .store import (
    DEFAULT_FRACTIONS,
    SPLITS,
    SampleStore,
    StoreError,
    decode_patch,
    encode_patch,
    iterate_store,
    label_from_name,
    split_sizes,
    write_store,
)

__all__ = [
    "CounterRNG",
    "DEFAULT_FRACTIONS",
    "MaskSample",
    "PATCH_SIZE",
    "PatchError",
    "RNG_NAME",
    "SPLITS",
    "Sample",
    "SampleStore",
    "SamplingError",
    "StoreError",
    "decode_patch",
    "dihedral",
    "dihedral_variants",
    "draw_pois",
    "encode_patch",
    "extract_mask",
    "extract_patch",
    "iterate_store",
    "label_from_name",
    "numpy_generator",
    "pad_channels",
    "patches_from_padded",
    "rotate_bearing",
    "sample_archive",
    "sample_mask_scheme",
    "sample_pois",
    "split_sizes",
    "write_store",
]
