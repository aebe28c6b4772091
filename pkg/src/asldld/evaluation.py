"""SNR and fidelity metrics, paired t-test, and the metrics CSV writer."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = ["subject", "method", "snr", "mse", "psnr", "gm_mean", "wm_std"]


@dataclass
class MetricsRow:
    subject: str
    method: str
    snr: float
    mse: float
    psnr: float
    gm_mean: float
    wm_std: float


def compute_snr(cbf: np.ndarray, gm_roi: np.ndarray, wm_roi: np.ndarray) -> float:
    """Mean over the GM ROI divided by the sample (n-1) std over the WM ROI."""
    gm_mean, wm_std = roi_stats(cbf, gm_roi, wm_roi)
    if not wm_std > 0:
        raise ValueError("white-matter ROI has zero standard deviation; SNR undefined")
    return gm_mean / wm_std


def roi_stats(cbf, gm_roi, wm_roi) -> tuple[float, float]:
    gm = np.asarray(cbf)[np.asarray(gm_roi, bool)]
    wm = np.asarray(cbf)[np.asarray(wm_roi, bool)]
    if gm.size == 0:
        raise ValueError("grey-matter ROI is empty")
    if wm.size < 2:
        raise ValueError(f"white-matter ROI needs at least 2 voxels, has {wm.size}")
    return float(gm.mean()), float(wm.std(ddof=1))


def compute_mse_psnr(cbf, truth, mask, peak: float | None = None) -> tuple[float, float]:
    """Masked MSE and PSNR in dB; PSNR is ``inf`` for a perfect match.

    ``peak`` defaults to the masked maximum of ``truth``.
    """
    cbf = np.asarray(cbf)
    truth = np.asarray(truth)
    if cbf.shape != truth.shape:
        raise ValueError(f"shape mismatch: {cbf.shape} vs truth {truth.shape}")
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    if peak is None:
        peak = float(truth[mask].max())
    if not peak > 0:
        raise ValueError(f"PSNR peak must be positive, got {peak}")
    diff = cbf[mask] - truth[mask]
    mse = float(np.mean(diff * diff))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)
    return mse, psnr


def snr_improvement(snr_after: float, snr_before: float) -> float:
    """Percentage SNR change relative to the baseline."""
    if not snr_before > 0:
        raise ValueError(f"baseline SNR must be positive, got {snr_before}")
    return 100.0 * (snr_after - snr_before) / snr_before


# ------------------------------------------------------------- paired t-test


def student_t_pdf(x: float, dof: float) -> float:
    log_norm = (math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)
                - 0.5 * math.log(dof * math.pi))
    return math.exp(log_norm - (dof + 1) / 2 * math.log1p(x * x / dof))


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature of ``f`` on [a, b] to absolute tolerance ``tol``."""
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = (a + b) / 2
        lm, rm = (a + m) / 2, (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15 * eps:
            total += left + right + delta / 15
        else:
            stack.append((m, b, fm, frm, fb, right, eps / 2, depth + 1))
            stack.append((a, m, fa, flm, fm, left, eps / 2, depth + 1))
    return total


def student_t_two_sided_p(t: float, dof: float, tol: float = 1e-10) -> float:
    central = adaptive_simpson(lambda x: student_t_pdf(x, dof), 0.0, abs(t), tol)
    return min(1.0, max(0.0, 1.0 - 2.0 * central))


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on ``a - b``; returns ``(t, p)``."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length 1-D lists, got {a.shape} and {b.shape}")
    n = a.size
    if n < 3:
        raise ValueError(f"paired t-test needs at least 3 pairs, got {n}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if not sd > 0:
        raise ValueError("paired differences have zero variance; t statistic undefined")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return t, student_t_two_sided_p(t, n - 1)


# ------------------------------------------------------------------------ CSV


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def write_metrics_csv(path, rows) -> None:
    """Write rows sorted by (subject, method) under the fixed header."""
    rows = sorted(rows, key=lambda r: (r.subject, r.method))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.subject, r.method] + [_fmt(getattr(r, k)) for k in CSV_HEADER[2:]])


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            MetricsRow(r["subject"], r["method"], *(float(r[k]) for k in CSV_HEADER[2:]))
            for r in reader
        ]


def evaluate_volume(subject_id: str, method: str, cbf, truth, brain_mask, gm_roi, wm_roi,
                    peak: float | None = None) -> MetricsRow:
    gm_mean, wm_std = roi_stats(cbf, gm_roi, wm_roi)
    mse, psnr = compute_mse_psnr(cbf, truth, brain_mask, peak)
    snr = gm_mean / wm_std if wm_std > 0 else math.nan
    return MetricsRow(subject_id, method, snr, mse, psnr, gm_mean, wm_std)
