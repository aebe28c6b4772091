import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from asldld.data import PhantomSpec, generate_phantom
from asldld.evaluation import (
    CSV_HEADER,
    MetricsRow,
    adaptive_simpson,
    compute_mse_psnr,
    compute_snr,
    evaluate_volume,
    paired_t_test,
    read_metrics_csv,
    snr_improvement,
    student_t_pdf,
    write_metrics_csv,
)


def two_roi_volume(gm_values, wm_values):
    v = np.concatenate([gm_values, wm_values]).astype(float)
    gm = np.zeros(v.size, bool)
    gm[:len(gm_values)] = True
    return v, gm, ~gm


# --------------------------------------------------------------------- SNR


def test_snr_arithmetic():
    v, gm, wm = two_roi_volume([60.0] * 5, [18.0, 22.0])
    assert np.std([18.0, 22.0], ddof=1) == pytest.approx(2.828427, abs=1e-6)
    assert compute_snr(v, gm, wm) == pytest.approx(21.2132, abs=1e-4)


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_snr_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    v, gm, wm = two_roi_volume(rng.normal(60, 5, 20), rng.normal(20, 5, 30))
    assert abs(compute_snr(c * v, gm, wm) / compute_snr(v, gm, wm) - 1) < 1e-12


def test_snr_not_shift_invariant():
    v, gm, wm = two_roi_volume([60.0] * 3, [18.0, 22.0])
    assert compute_snr(v + 5, gm, wm) != compute_snr(v, gm, wm)


def test_snr_monte_carlo_on_phantom():
    spec = PhantomSpec(dims=(46, 56, 46), voxel_mm=(4.0, 4.0, 4.0), axis_jitter=0.0, cbf_jitter=0.0)
    s = generate_phantom(spec)
    snrs = []
    for seed in range(50):
        v = s.truth_cbf.copy()
        v[s.wm_roi] += np.random.default_rng(seed).normal(0, 5, s.wm_roi.sum())
        snrs.append(compute_snr(v, s.gm_roi, s.wm_roi))
    assert abs(np.mean(snrs) / 12 - 1) < 0.10


def test_snr_rejects_degenerate_rois():
    v, gm, wm = two_roi_volume([60.0], [20.0, 20.0])
    with pytest.raises(ValueError, match="zero standard deviation"):
        compute_snr(v, gm, wm)
    with pytest.raises(ValueError, match="empty"):
        compute_snr(v, np.zeros_like(gm), wm)


# -------------------------------------------------------------------- PSNR


def test_psnr_examples():
    truth = np.random.default_rng(0).random((4, 4, 4)) * 80
    mask = np.ones_like(truth, bool)
    assert compute_mse_psnr(truth, truth, mask) == (0.0, math.inf)
    mse, psnr = compute_mse_psnr(truth + 3, truth, mask, peak=90.0)
    assert mse == pytest.approx(9.0, rel=1e-12)
    assert psnr == pytest.approx(10 * math.log10(90.0 ** 2 / 9.0), rel=1e-12)
    with pytest.raises(ValueError, match="empty"):
        compute_mse_psnr(truth, truth, ~mask)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    truth = rng.random((20, 20, 20)) * 60
    mask = truth > 5
    psnrs = [compute_mse_psnr(truth + rng.normal(0, s, truth.shape), truth, mask)[1] for s in (5, 10, 20)]
    assert psnrs[0] > psnrs[1] > psnrs[2]


def test_psnr_default_peak_is_masked_truth_max():
    truth = np.array([1.0, 50.0, 1000.0])
    mask = np.array([True, True, False])
    mse, psnr = compute_mse_psnr(truth + 1, truth, mask)
    assert psnr == pytest.approx(10 * math.log10(50.0 ** 2 / 1.0))


# ------------------------------------------------------------- improvement


def test_snr_improvement():
    assert snr_improvement(1.386 * 10, 10) == pytest.approx(38.6)
    assert snr_improvement(5, 5) == 0.0
    assert snr_improvement(20, 10) == 100.0
    with pytest.raises(ValueError):
        snr_improvement(1, 0)


# ------------------------------------------------------------------ t-test


def test_t_test_identical_lists_rejected():
    with pytest.raises(ValueError, match="variance"):
        paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError, match="3"):
        paired_t_test([1, 2], [0, 0])


def test_t_test_symmetric_differences():
    t, p = paired_t_test([1, -1, 1, -1], [0, 0, 0, 0])
    assert t == 0.0 and p == pytest.approx(1.0, abs=1e-12)


def test_t_test_matches_quadrature_oracle():
    rng = np.random.default_rng(10)
    a, b = rng.normal(1.0, 1.0, 10), rng.normal(0.3, 1.0, 10)
    t, p = paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert t == pytest.approx(ref.statistic, rel=1e-12)
    tail, _ = integrate.quad(lambda x: stats.t.pdf(x, 9), abs(t), np.inf, epsabs=1e-13, epsrel=1e-13)
    assert abs(p - 2 * tail) < 1e-6
    assert abs(p - ref.pvalue) < 1e-6


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 30))
def test_t_test_antisymmetric(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, n))
    t1, p1 = paired_t_test(a, b)
    t2, p2 = paired_t_test(b, a)
    assert t1 == -t2 and p1 == p2
    assert abs(p1 - stats.t.sf(abs(t1), n - 1) * 2) < 1e-8


def test_student_t_density_and_simpson():
    assert student_t_pdf(0.3, 4) == pytest.approx(stats.t.pdf(0.3, 4), rel=1e-12)
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-10)


# --------------------------------------------------------------------- CSV


def row(subject, method, **kw):
    base = dict(snr=1.0, mse=2.0, psnr=3.0, gm_mean=4.0, wm_std=5.0)
    return MetricsRow(subject, method, **{**base, **kw})


def test_csv_empty(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", [])
    assert (tmp_path / "m.csv").read_text() == "subject,method,snr,mse,psnr,gm_mean,wm_std\n"


def test_csv_order_and_round_trip(tmp_path):
    rows = [row("s2", "b", snr=1 / 3), row("s1", "b"), row("s2", "a", psnr=math.inf), row("s1", "a", mse=123456.789)]
    write_metrics_csv(tmp_path / "m.csv", rows)
    with open(tmp_path / "m.csv", newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == CSV_HEADER
    assert [r[:2] for r in parsed[1:]] == [["s1", "a"], ["s1", "b"], ["s2", "a"], ["s2", "b"]]
    assert parsed[3][4] == "inf" and parsed[1][3] == "123457"
    back = read_metrics_csv(tmp_path / "m.csv")
    assert back[3].snr == pytest.approx(1 / 3, rel=1e-6)
    assert math.isinf(back[2].psnr)


def test_evaluate_volume_consistency():
    rng = np.random.default_rng(3)
    truth = rng.random((6, 6, 6)) * 60
    gm = truth > 40
    wm = truth < 20
    r = evaluate_volume("s", "m", truth + rng.normal(0, 1, truth.shape), truth, truth > 0, gm, wm)
    assert r.snr == pytest.approx(r.gm_mean / r.wm_std, rel=1e-15)
