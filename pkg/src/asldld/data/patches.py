"""Training-set assembly: input/reference/GM slices cut into aligned patches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phantom import PhantomSubject
from .preprocess import (
    adaptive_outlier_clean,
    gaussian_smooth,
    mean_cbf,
    training_slice_indices,
)


@dataclass(frozen=True)
class PrepConfig:
    input_pairs: int = 10
    gm_scale: float = 60.0
    smooth_fwhm_mm: float = 4.0
    patch_size: int = 16
    stride: int = 4
    slice_first: int = 36
    slice_last: int = 60
    slice_step: int = 3
    slice_one_based: bool = True
    corr_thresh: float = 0.7
    mad_k: float = 3.0
    min_keep: int = 0  # 0 -> half the series


def patch_anchors(h: int, w: int, size: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    if h < size or w < size:
        raise ValueError(f"slice {h}x{w} is smaller than patch size {size}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return np.arange(0, h - size + 1, stride), np.arange(0, w - size + 1, stride)


def patch_count(h: int, w: int, size: int = 16, stride: int = 4) -> int:
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


@dataclass
class PatchSet:
    """Aligned (input, target, gm) patch triplets.

    Patches are views into stored source slices and are materialised on
    demand by :meth:`take`, so a full training set stays small in memory.
    ``anchors`` rows are (source slice, row, col); ``sources`` rows are
    (subject, axial index) for each source slice.
    """

    size: int
    stride: int
    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    gm: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    input_smoothed: bool = False
    _stacked: tuple | None = field(default=None, init=False, repr=False)

    def __len__(self) -> int:
        return len(self.anchors)

    def add_slice(self, input_slice, target_slice, gm_slice, source=(0, 0)) -> None:
        shapes = {np.shape(input_slice), np.shape(target_slice), np.shape(gm_slice)}
        if len(shapes) != 1:
            raise ValueError(f"input/target/gm slices differ in shape: {sorted(shapes)}")
        h, w = np.shape(input_slice)
        rows, cols = patch_anchors(h, w, self.size, self.stride)
        s = len(self.inputs)
        self.inputs.append(np.asarray(input_slice, np.float64))
        self.targets.append(np.asarray(target_slice, np.float64))
        self.gm.append(np.asarray(gm_slice, np.float64))
        self.sources.append(tuple(source))
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        new = np.column_stack([np.full(rr.size, s), rr.ravel(), cc.ravel()])
        self.anchors = np.concatenate([self.anchors, new.astype(np.int64)])
        self._stacked = None

    def take(self, indices):
        """Return ``(inputs, targets, gm)`` arrays of shape [k, size, size]."""
        a = self.anchors[np.asarray(indices, np.int64)]
        off = np.arange(self.size)
        s = a[:, 0, None, None]
        r = a[:, 1, None, None] + off[None, :, None]
        c = a[:, 2, None, None] + off[None, None, :]
        if self._stacked is None:
            self._stacked = tuple(np.stack(src) for src in (self.inputs, self.targets, self.gm))
        return tuple(src[s, r, c] for src in self._stacked)

    def subset(self, indices) -> "PatchSet":
        out = PatchSet(self.size, self.stride, self.inputs, self.targets, self.gm, self.sources,
                       self.anchors[np.sort(np.asarray(indices, np.int64))], self.input_smoothed)
        out._stacked = self._stacked
        return out

    def provenance(self, i: int) -> tuple:
        s, r, c = (int(v) for v in self.anchors[i])
        return self.sources[s] + (r, c)


def extract_patches(input_slice, target_slice, gm_slice, size: int = 16, stride: int = 4) -> PatchSet:
    ps = PatchSet(size, stride)
    ps.add_slice(input_slice, target_slice, gm_slice)
    return ps


def input_volume(subject: PhantomSubject, cfg: PrepConfig) -> np.ndarray:
    """Network input: unsmoothed mean of the first ``input_pairs`` repetitions."""
    return mean_cbf(subject.cbf_series, cfg.input_pairs)


def reference_volume(subject: PhantomSubject, cfg: PrepConfig) -> np.ndarray:
    """Training target: outlier-cleaned mean over all repetitions, then smoothed."""
    _, cleaned = adaptive_outlier_clean(
        subject.cbf_series, subject.brain_mask, subject.gm_roi,
        cfg.corr_thresh, cfg.mad_k, cfg.min_keep or None,
    )
    return gaussian_smooth(cleaned, cfg.smooth_fwhm_mm, subject.meta.voxel_mm)


def build_training_set(subjects, cfg: PrepConfig) -> PatchSet:
    """Patch triplets from the selected axial slices of every subject.

    ``subjects`` may be any iterable (a generator keeps only one subject's
    repetitions in memory at a time). Subject ids are enumeration order.
    """
    ps = PatchSet(cfg.patch_size, cfg.stride)
    n = 0
    for sid, subject in enumerate(subjects):
        if subject.cbf_series is None:
            raise ValueError(f"subject {sid} has no simulated repetitions")
        x_in = input_volume(subject, cfg)
        x_ref = reference_volume(subject, cfg)
        gm = subject.gm_prob * cfg.gm_scale
        for z in training_slice_indices(x_in.shape[2], cfg.slice_first, cfg.slice_last,
                                        cfg.slice_step, cfg.slice_one_based):
            ps.add_slice(x_in[:, :, z], x_ref[:, :, z], gm[:, :, z], (sid, z))
        n += 1
    if n == 0:
        raise ValueError("build_training_set needs at least one subject")
    return ps
