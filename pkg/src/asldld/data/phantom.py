"""Synthetic ASL subjects: ellipsoidal GM shell around a WM core, plus noisy repetitions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocess import gaussian_smooth
from .volume_io import VolumeMeta

BRAIN_MASK_THRESHOLD = 0.05
PURE_TISSUE = 0.9


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (91, 109, 91)
    voxel_mm: tuple = (2.0, 2.0, 2.0)
    brain_axes_mm: tuple = (70.0, 88.0, 62.0)
    wm_axes_mm: tuple = (56.0, 74.0, 48.0)
    gm_cbf: float = 60.0
    wm_cbf: float = 20.0
    sigma: float = 15.0
    blur_fwhm_mm: float = 4.0
    outlier_prob: float = 0.05
    outlier_mult: float = 6.0
    axis_jitter: float = 0.1
    cbf_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.gm_cbf > self.wm_cbf > 0:
            raise ValueError(f"need gm_cbf > wm_cbf > 0, got {self.gm_cbf}, {self.wm_cbf}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        for name in ("outlier_prob", "axis_jitter", "cbf_jitter"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.blur_fwhm_mm < 0:
            raise ValueError(f"blur_fwhm_mm must be non-negative, got {self.blur_fwhm_mm}")
        VolumeMeta(self.dims, self.voxel_mm)


@dataclass
class PhantomSubject:
    gm_prob: np.ndarray
    wm_prob: np.ndarray
    truth_cbf: np.ndarray
    brain_mask: np.ndarray
    gm_roi: np.ndarray
    wm_roi: np.ndarray
    meta: VolumeMeta
    gm_cbf: float
    wm_cbf: float
    seed: int
    cbf_series: np.ndarray | None = None
    outlier_indices: list = field(default_factory=list)


def _ellipsoid(dims, voxel_mm, axes_mm) -> np.ndarray:
    grids = np.meshgrid(
        *[(np.arange(n) - (n - 1) / 2.0) * v / a for n, v, a in zip(dims, voxel_mm, axes_mm)],
        indexing="ij", sparse=True,
    )
    return sum(g * g for g in grids) <= 1.0


def generate_phantom(spec: PhantomSpec) -> PhantomSubject:
    """Tissue maps and ground-truth CBF for one subject (no repetitions yet).

    Axes and CBF levels are jittered per seed; the hard tissue masks are blurred
    by ``blur_fwhm_mm`` to mimic partial-volume mixing at boundaries.
    """
    rng = np.random.default_rng([spec.seed, 0])
    stretch = rng.uniform(1 - spec.axis_jitter, 1 + spec.axis_jitter, size=3)
    gm_cbf = spec.gm_cbf * rng.uniform(1 - spec.cbf_jitter, 1 + spec.cbf_jitter)
    wm_cbf = spec.wm_cbf * rng.uniform(1 - spec.cbf_jitter, 1 + spec.cbf_jitter)

    brain_axes = np.asarray(spec.brain_axes_mm) * stretch
    wm_axes = np.asarray(spec.wm_axes_mm) * stretch
    if np.any(wm_axes <= 0) or np.any(wm_axes >= brain_axes):
        raise ValueError(f"degenerate geometry: WM axes {wm_axes} must lie inside brain axes {brain_axes}")
    brain = _ellipsoid(spec.dims, spec.voxel_mm, brain_axes)
    wm = _ellipsoid(spec.dims, spec.voxel_mm, wm_axes)
    gm = brain & ~wm
    if not gm.any():
        raise ValueError("degenerate geometry: GM shell contains no voxels")
    if not gm_cbf > wm_cbf:
        raise ValueError(f"jittered CBF levels are inverted: gm {gm_cbf}, wm {wm_cbf}")

    gm_prob = np.clip(gaussian_smooth(gm.astype(np.float64), spec.blur_fwhm_mm, spec.voxel_mm), 0, 1)
    wm_prob = np.clip(gaussian_smooth(wm.astype(np.float64), spec.blur_fwhm_mm, spec.voxel_mm), 0, 1)
    excess = np.maximum(gm_prob + wm_prob - 1.0, 0.0)  # rounding only
    gm_prob -= excess

    truth = gm_cbf * gm_prob + wm_cbf * wm_prob
    brain_mask = gm_prob + wm_prob > BRAIN_MASK_THRESHOLD
    return PhantomSubject(
        gm_prob=gm_prob,
        wm_prob=wm_prob,
        truth_cbf=truth,
        brain_mask=brain_mask,
        gm_roi=brain_mask & (gm_prob > PURE_TISSUE),
        wm_roi=brain_mask & (wm_prob > PURE_TISSUE),
        meta=VolumeMeta(spec.dims, spec.voxel_mm),
        gm_cbf=float(gm_cbf),
        wm_cbf=float(wm_cbf),
        seed=spec.seed,
    )


def simulate_asl_series(subject: PhantomSubject, n_pairs: int, spec: PhantomSpec) -> np.ndarray:
    """Perfusion-difference repetitions: truth plus Gaussian noise inside the brain.

    With probability ``outlier_prob`` a repetition is corrupted: its noise is
    multiplied by ``outlier_mult`` and a global offset of
    ``+-outlier_mult * sigma / 2`` is added inside the mask. Corrupted indices
    are recorded in ``subject.outlier_indices``; the series is also stored on
    the subject and returned.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    rng = np.random.default_rng([subject.seed, 1])
    mask = subject.brain_mask
    n_in = int(mask.sum())
    series = np.empty((n_pairs,) + subject.truth_cbf.shape)
    outliers = []
    for r in range(n_pairs):
        corrupt = rng.random() < spec.outlier_prob
        noise = rng.standard_normal(n_in) * spec.sigma
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if corrupt:
            noise = noise * spec.outlier_mult + sign * spec.outlier_mult * spec.sigma / 2
            outliers.append(r)
        rep = subject.truth_cbf.copy()
        rep[mask] += noise
        series[r] = rep
    subject.cbf_series = series
    subject.outlier_indices = outliers
    return series


def make_subject(spec: PhantomSpec, n_pairs: int = 40) -> PhantomSubject:
    subject = generate_phantom(spec)
    simulate_asl_series(subject, n_pairs, spec)
    return subject


def subject_seeds(master_seed: int, n: int) -> list[int]:
    """Independent 63-bit per-subject seeds split from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]
