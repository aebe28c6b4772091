"""Synthetic ASL data, preprocessing, patch extraction and volume file formats."""
from .patches import (
    PatchSet,
    PrepConfig,
    build_training_set,
    extract_patches,
    input_volume,
    patch_count,
    reference_volume,
)
from .phantom import (
    PhantomSpec,
    PhantomSubject,
    generate_phantom,
    make_subject,
    simulate_asl_series,
    subject_seeds,
)
from .preprocess import (
    adaptive_outlier_clean,
    gaussian_smooth,
    mean_cbf,
    select_training_slices,
    subtract_pairs,
    training_slice_indices,
)
from .volume_io import (
    VolumeMeta,
    read_nifti,
    read_raw,
    read_volume,
    write_nifti,
    write_raw,
    write_volume,
)
