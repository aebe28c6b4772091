"""Classical ASL preprocessing: subtraction, averaging, smoothing, outlier cleaning."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))  # 2.3548...
MAD_TO_SIGMA = 1.4826


def subtract_pairs(control: np.ndarray, label: np.ndarray, scale: float = 1.0) -> np.ndarray:
    control = np.asarray(control, np.float64)
    label = np.asarray(label, np.float64)
    if control.shape != label.shape:
        raise ValueError(f"control shape {control.shape} does not match label shape {label.shape}")
    return scale * (control - label)


def mean_cbf(series, k: int) -> np.ndarray:
    """Voxelwise mean of the first ``k`` repetitions."""
    n = len(series)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    return np.mean(np.asarray(series[:k], np.float64), axis=0)


def gaussian_kernel(sigma_vox: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sigma_vox))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_vox) ** 2)
    return k / k.sum()


def gaussian_smooth(volume: np.ndarray, fwhm_mm: float, voxel_mm) -> np.ndarray:
    """Separable Gaussian smoothing with a truncated (4 sigma), renormalised kernel.

    Out-of-grid taps are dropped and the remaining weights renormalised, so
    constants are preserved up to the edges and nothing wraps around.
    ``voxel_mm`` may be a :class:`VolumeMeta` or a per-axis sequence.
    """
    if fwhm_mm < 0:
        raise ValueError(f"fwhm_mm must be non-negative, got {fwhm_mm}")
    voxel_mm = getattr(voxel_mm, "voxel_mm", voxel_mm)
    volume = np.asarray(volume, np.float64)
    if fwhm_mm == 0:
        return volume.copy()
    if len(voxel_mm) != volume.ndim:
        raise ValueError(f"need one voxel size per axis: {voxel_mm} for shape {volume.shape}")
    out = volume
    for axis, vox in enumerate(voxel_mm):
        kernel = gaussian_kernel(fwhm_mm / (FWHM_TO_SIGMA * vox))
        n = volume.shape[axis]
        norm = correlate1d(np.ones(n), kernel, mode="constant", cval=0.0)
        out = correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
        shape = [1] * volume.ndim
        shape[axis] = n
        out = out / norm.reshape(shape)
    return out


def _row_correlations(rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    rc = rows - rows.mean(axis=1, keepdims=True)
    r = ref - ref.mean()
    denom = np.sqrt(np.sum(rc * rc, axis=1) * np.dot(r, r))
    num = rc @ r
    # zero variance: correlation undefined, treat as perfectly correlated
    return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 1.0)


def adaptive_outlier_clean(series, brain_mask, gm_roi, corr_thresh: float = 0.7,
                           mad_k: float = 3.0, min_keep: int | None = None):
    """Iteratively drop corrupted repetitions before averaging.

    A repetition is dropped when its in-mask Pearson correlation with the
    current kept-set mean falls below ``corr_thresh``, or when its GM-ROI mean
    lies more than ``mad_k`` robust standard deviations (1.4826 * MAD) from the
    kept-set median. Never keeps fewer than ``min_keep`` (default half).

    Returns ``(kept_indices, cleaned_mean)``.
    """
    series = np.asarray(series, np.float64)
    n = series.shape[0]
    if n < 2:
        raise ValueError(f"outlier cleaning needs at least 2 repetitions, got {n}")
    if min_keep is None or min_keep <= 0:
        min_keep = (n + 1) // 2
    min_keep = min(min_keep, n)
    in_mask = series[:, np.asarray(brain_mask, bool)]
    gm_means = series[:, np.asarray(gm_roi, bool)].mean(axis=1)

    kept = np.arange(n)
    while len(kept) > min_keep:
        corr = _row_correlations(in_mask[kept], in_mask[kept].mean(axis=0))
        g = gm_means[kept]
        med = np.median(g)
        spread = MAD_TO_SIGMA * np.median(np.abs(g - med))
        bad = corr < corr_thresh
        if spread > 0:
            bad |= np.abs(g - med) > mad_k * spread
        if not bad.any():
            break
        candidates = np.flatnonzero(bad)
        allowed = len(kept) - min_keep
        if len(candidates) > allowed:
            candidates = candidates[np.argsort(corr[candidates], kind="stable")[:allowed]]
        kept = np.delete(kept, candidates)
    return [int(i) for i in kept], series[kept].mean(axis=0)


def training_slice_indices(n_slices: int, first: int = 36, last: int = 60, step: int = 3,
                           one_based: bool = True) -> list[int]:
    """0-based axial indices for slices ``first, first+step, ..., last``."""
    base = 1 if one_based else 0
    idx = [s - base for s in range(first, last + 1, step)]
    if not idx or idx[0] < 0:
        raise ValueError(f"invalid slice range {first}..{last} step {step}")
    if idx[-1] >= n_slices:
        raise ValueError(
            f"volume has {n_slices} axial slices; slice {last} "
            f"({'1' if one_based else '0'}-based) is out of range"
        )
    return idx


def select_training_slices(volume: np.ndarray, first: int = 36, last: int = 60, step: int = 3,
                           one_based: bool = True) -> list[np.ndarray]:
    """Axial (last-axis) slices of a 3-D volume, by default 36, 39, ..., 60."""
    idx = training_slice_indices(volume.shape[2], first, last, step, one_based)
    return [volume[:, :, z] for z in idx]
