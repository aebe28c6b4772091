"""File-backed pipeline stages behind the CLI subcommands.

On-disk layout under ``out``::

    phantoms/manifest.json, phantoms/sub-XXX/*.nii|*.aslv
    model.asld, loss.csv, train_config.txt
    denoised/sub-XXX_asldld.nii|.aslv
    metrics.csv, evaluation.txt
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from .checks import run_all
from .config import ConfigError, RunConfig
from .data import (
    PhantomSubject,
    build_training_set,
    gaussian_smooth,
    input_volume,
    make_subject,
    read_volume,
    reference_volume,
    subject_seeds,
    write_volume,
)
from .evaluation import evaluate_volume, paired_t_test, snr_improvement, write_metrics_csv
from .model import Checkpoint, build_model, denoise_volume, load_checkpoint, save_checkpoint
from .optimizer import AdamState, train_epoch

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MAP_NAMES = ("gm_prob", "wm_prob", "truth", "brain_mask", "gm_roi", "wm_roi")
METHODS = ("meanCBF-10", "meanCBF-10-smoothed", "meanCBF-40-reference", "ASLDLD")


class MissingInputError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _ensure_writable_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


def _refuse_overwrite(paths, overwrite: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)} (pass --overwrite)")


# -------------------------------------------------------------------- phantom


def cmd_phantom(cfg: RunConfig, overwrite: bool = False) -> Path:
    root = cfg.data_path
    _ensure_writable_dir(root)
    _refuse_overwrite([root / MANIFEST], overwrite)
    suffix = cfg.volume_suffix
    entries = []
    for i, seed in enumerate(subject_seeds(cfg.seed, cfg.n_subjects)):
        sid = f"sub-{i:03d}"
        sdir = root / sid
        sdir.mkdir(exist_ok=True)
        subj = make_subject(cfg.phantom_spec(seed), cfg.n_pairs)
        maps = dict(zip(MAP_NAMES, (subj.gm_prob, subj.wm_prob, subj.truth_cbf,
                                    subj.brain_mask, subj.gm_roi, subj.wm_roi)))
        files = {}
        for name, vol in maps.items():
            files[name] = name + suffix
            write_volume(sdir / files[name], vol.astype(np.float64), subj.meta)
        if suffix == ".nii":
            files["series"] = "series.nii"
            write_volume(sdir / "series.nii", np.moveaxis(subj.cbf_series, 0, -1), subj.meta)
        else:
            for r in range(cfg.n_pairs):
                files[f"series_{r:02d}"] = f"series_{r:02d}.aslv"
                write_volume(sdir / files[f"series_{r:02d}"], subj.cbf_series[r], subj.meta)
        entries.append({
            "id": sid,
            "seed": seed,
            "gm_cbf": subj.gm_cbf,
            "wm_cbf": subj.wm_cbf,
            "outlier_indices": subj.outlier_indices,
            "files": files,
            "sha256": {k: _sha256(sdir / v) for k, v in sorted(files.items())},
        })
        log.info("wrote %s (outliers %s)", sid, subj.outlier_indices)
    manifest = {
        "master_seed": cfg.seed,
        "n_pairs": cfg.n_pairs,
        "n_test": cfg.n_test,
        "format": cfg.volume_format,
        "subjects": entries,
    }
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(cfg: RunConfig) -> dict:
    path = cfg.data_path / MANIFEST
    if not path.exists():
        raise MissingInputError(f"manifest not found: {path} (run 'phantom' first)")
    return json.loads(path.read_text())


def load_subject(cfg: RunConfig, entry: dict) -> PhantomSubject:
    sdir = cfg.data_path / entry["id"]
    files = entry["files"]
    for name in files.values():
        if not (sdir / name).exists():
            raise MissingInputError(f"missing subject file {sdir / name}")
    vols = {}
    meta = None
    for name in MAP_NAMES:
        vols[name], meta = read_volume(sdir / files[name])
    if "series" in files:
        series = np.moveaxis(read_volume(sdir / files["series"])[0], -1, 0)
    else:
        keys = sorted(k for k in files if k.startswith("series_"))
        series = np.stack([read_volume(sdir / files[k])[0] for k in keys])
    return PhantomSubject(
        gm_prob=vols["gm_prob"], wm_prob=vols["wm_prob"], truth_cbf=vols["truth"],
        brain_mask=vols["brain_mask"] > 0.5, gm_roi=vols["gm_roi"] > 0.5,
        wm_roi=vols["wm_roi"] > 0.5, meta=meta, gm_cbf=entry["gm_cbf"],
        wm_cbf=entry["wm_cbf"], seed=entry["seed"], cbf_series=series,
        outlier_indices=list(entry["outlier_indices"]),
    )


def split_subjects(cfg: RunConfig, manifest: dict):
    subjects = manifest["subjects"]
    n_train = len(subjects) - cfg.n_test
    return subjects[:n_train], subjects[n_train:]


# ---------------------------------------------------------------------- train


def cmd_train(cfg: RunConfig, overwrite: bool = False) -> Path:
    manifest = load_manifest(cfg)
    train_entries, _ = split_subjects(cfg, manifest)
    if not train_entries:
        raise ConfigError(f"no training subjects: {len(manifest['subjects'])} subjects, n_test={cfg.n_test}")
    out = Path(cfg.out)
    _ensure_writable_dir(out)
    ckpt_path = cfg.checkpoint_path
    _ensure_writable_dir(ckpt_path.parent)
    _refuse_overwrite([ckpt_path, out / "loss.csv"], overwrite)

    prep = cfg.prep_config()
    patches = build_training_set((load_subject(cfg, e) for e in train_entries), prep)
    rng = np.random.default_rng([cfg.seed, 2])
    if cfg.max_patches and cfg.max_patches < len(patches):
        patches = patches.subset(rng.choice(len(patches), cfg.max_patches, replace=False))
    log.info("training on %d patches from %d subjects", len(patches), len(train_entries))

    tcfg = cfg.train_config()
    params = build_model(cfg.model_spec(), cfg.seed, cfg.bn_momentum, cfg.bn_eps)
    state = AdamState.zeros_like(params.trainable())
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        params, state, stats = train_epoch(params, state, patches, tcfg, rng)
        rows.append((epoch, stats.data_term, stats.prior_term, stats.total))
        log.info("epoch %d: data %.6g prior %.6g total %.6g", *rows[-1])

    save_checkpoint(ckpt_path, Checkpoint(params.spec, params, state.t, cfg.seed, cfg.fingerprint()))
    with open(out / "loss.csv", "w") as fh:
        fh.write("epoch,data_term,prior_term,total\n")
        for epoch, d, p, t in rows:
            fh.write(f"{epoch},{d:.10g},{p:.10g},{t:.10g}\n")
    (out / "train_config.txt").write_text(f"# fingerprint {cfg.fingerprint()}\n" + cfg.dumps())
    return ckpt_path


# -------------------------------------------------------------------- denoise


def _load_matching_checkpoint(cfg: RunConfig) -> Checkpoint:
    path = cfg.checkpoint_path
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path} (run 'train' first)")
    ckpt = load_checkpoint(path, cfg.bn_momentum, cfg.bn_eps)
    if ckpt.spec != cfg.model_spec():
        raise ConfigError(f"checkpoint model {ckpt.spec} does not match configured model {cfg.model_spec()}")
    return ckpt


def denoised_path(cfg: RunConfig, sid: str) -> Path:
    return Path(cfg.out) / "denoised" / f"{sid}_asldld{cfg.volume_suffix}"


def cmd_denoise(cfg: RunConfig, overwrite: bool = False, echo=print) -> list[Path]:
    manifest = load_manifest(cfg)
    _, test_entries = split_subjects(cfg, manifest)
    if not test_entries:
        raise ConfigError("n_test is 0: no held-out subjects to denoise")
    ckpt = _load_matching_checkpoint(cfg)
    outs = [denoised_path(cfg, e["id"]) for e in test_entries]
    _ensure_writable_dir(outs[0].parent)
    _refuse_overwrite(outs, overwrite)
    prep = cfg.prep_config()
    for entry, path in zip(test_entries, outs):
        subj = load_subject(cfg, entry)
        noisy = input_volume(subj, prep)
        t0 = time.perf_counter()
        clean = denoise_volume(ckpt.params, noisy)
        echo(f"{entry['id']}: denoised {noisy.shape} in {time.perf_counter() - t0:.2f} s")
        write_volume(path, clean, subj.meta)
    return outs


# ------------------------------------------------------------------- evaluate


def method_volumes(subj: PhantomSubject, cfg: RunConfig, denoised: np.ndarray) -> dict:
    prep = cfg.prep_config()
    raw = input_volume(subj, prep)
    return {
        "meanCBF-10": raw,
        "meanCBF-10-smoothed": gaussian_smooth(raw, prep.smooth_fwhm_mm, subj.meta.voxel_mm),
        "meanCBF-40-reference": reference_volume(subj, prep),
        "ASLDLD": denoised,
    }


def cmd_evaluate(cfg: RunConfig, overwrite: bool = False, echo=print) -> Path:
    manifest = load_manifest(cfg)
    _, test_entries = split_subjects(cfg, manifest)
    if not test_entries:
        raise ConfigError("n_test is 0: no held-out subjects to evaluate")
    out = Path(cfg.out)
    _ensure_writable_dir(out)
    csv_path = out / "metrics.csv"
    _refuse_overwrite([csv_path, out / "evaluation.txt"], overwrite)
    missing = [str(denoised_path(cfg, e["id"])) for e in test_entries
               if not denoised_path(cfg, e["id"]).exists()]
    if missing:
        raise MissingInputError(f"denoised volumes missing (run 'denoise'): {', '.join(missing)}")

    rows = []
    peak = cfg.psnr_peak or None
    for entry in test_entries:
        subj = load_subject(cfg, entry)
        denoised, _ = read_volume(denoised_path(cfg, entry["id"]))
        for method, vol in method_volumes(subj, cfg, denoised).items():
            rows.append(evaluate_volume(entry["id"], method, vol, subj.truth_cbf,
                                        subj.brain_mask, subj.gm_roi, subj.wm_roi, peak))
    write_metrics_csv(csv_path, rows)

    snr = {m: [r.snr for r in rows if r.method == m] for m in METHODS}
    lines = []
    for m in METHODS:
        lines.append(f"mean SNR {m}: {np.mean(snr[m]):.6g}")
    gain = snr_improvement(float(np.mean(snr["ASLDLD"])), float(np.mean(snr["meanCBF-10"])))
    lines.append(f"SNR improvement ASLDLD vs meanCBF-10: {gain:.6g}%")
    try:
        t, p = paired_t_test(snr["ASLDLD"], snr["meanCBF-10"])
        lines.append(f"paired t-test ASLDLD vs meanCBF-10: t={t:.6g} p={p:.6g} (n={len(test_entries)})")
    except ValueError as exc:
        lines.append(f"paired t-test skipped: {exc}")
    (out / "evaluation.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        echo(line)
    return csv_path


# ------------------------------------------------------------------ gradcheck


def cmd_gradcheck(cfg: RunConfig, echo=print) -> bool:
    results = run_all(inject_bug=cfg.gradcheck_inject_bug)
    for r in results:
        echo(r.line())
    return all(r.passed for r in results)
