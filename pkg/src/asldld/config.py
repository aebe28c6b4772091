"""Flat ``key = value`` run configuration shared by every CLI command."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .data import PhantomSpec, PrepConfig
from .model import ModelSpec
from .optimizer import OptConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # paths and run layout
    out: str = "run"
    data_dir: str = ""  # default: <out>/phantoms
    checkpoint: str = ""  # default: <out>/model.asld
    volume_format: str = "nifti"  # nifti | aslv
    seed: int = 0
    n_subjects: int = 4
    n_test: int = 1  # the last n_test subjects are held out
    n_pairs: int = 40

    # phantom
    dims: tuple = (91, 109, 91)
    voxel_mm: tuple = (2.0, 2.0, 2.0)
    brain_axes_mm: tuple = (70.0, 88.0, 62.0)
    wm_axes_mm: tuple = (56.0, 74.0, 48.0)
    gm_cbf: float = 60.0
    wm_cbf: float = 20.0
    noise_sigma: float = 15.0
    blur_fwhm_mm: float = 4.0
    outlier_prob: float = 0.05
    outlier_mult: float = 6.0
    axis_jitter: float = 0.1
    cbf_jitter: float = 0.1

    # preprocessing and patches
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
    min_keep: int = 0
    max_patches: int = 0  # 0: use every patch

    # model
    num_layers: int = 5
    filters: int = 128
    kernel: int = 7
    bn_layers: tuple = (1, 2, 3, 4)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    # training
    alpha: float = 0.1
    batch_size: int = 64
    epochs: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 0.1

    # evaluation / gradcheck
    psnr_peak: float = 0.0  # 0: masked max of ground truth
    gradcheck_inject_bug: bool = False

    def __post_init__(self):
        if self.volume_format not in ("nifti", "aslv"):
            raise ConfigError(f"volume_format must be 'nifti' or 'aslv', got {self.volume_format!r}")
        if self.n_subjects < 1:
            raise ConfigError(f"n_subjects must be >= 1, got {self.n_subjects}")
        if not 0 <= self.n_test <= self.n_subjects:
            raise ConfigError(f"n_test must lie in 0..n_subjects, got {self.n_test}")
        if not 1 <= self.input_pairs <= self.n_pairs:
            raise ConfigError(f"input_pairs must lie in 1..n_pairs, got {self.input_pairs}")
        if self.max_patches < 0 or self.epochs < 1:
            raise ConfigError("max_patches must be >= 0 and epochs >= 1")
        try:
            self.phantom_spec()
            self.model_spec()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived paths
    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out) / "phantoms"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "model.asld"

    @property
    def volume_suffix(self) -> str:
        return ".nii" if self.volume_format == "nifti" else ".aslv"

    # component configs
    def phantom_spec(self, seed: int | None = None) -> PhantomSpec:
        return PhantomSpec(
            dims=self.dims, voxel_mm=self.voxel_mm, brain_axes_mm=self.brain_axes_mm,
            wm_axes_mm=self.wm_axes_mm, gm_cbf=self.gm_cbf, wm_cbf=self.wm_cbf,
            sigma=self.noise_sigma, blur_fwhm_mm=self.blur_fwhm_mm,
            outlier_prob=self.outlier_prob, outlier_mult=self.outlier_mult,
            axis_jitter=self.axis_jitter, cbf_jitter=self.cbf_jitter,
            seed=self.seed if seed is None else seed,
        )

    def prep_config(self) -> PrepConfig:
        return PrepConfig(
            input_pairs=self.input_pairs, gm_scale=self.gm_scale,
            smooth_fwhm_mm=self.smooth_fwhm_mm, patch_size=self.patch_size, stride=self.stride,
            slice_first=self.slice_first, slice_last=self.slice_last, slice_step=self.slice_step,
            slice_one_based=self.slice_one_based, corr_thresh=self.corr_thresh,
            mad_k=self.mad_k, min_keep=self.min_keep,
        )

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.num_layers, self.filters, self.kernel, 1, frozenset(self.bn_layers))

    def train_config(self) -> TrainConfig:
        opt = OptConfig(self.learning_rate, self.beta1, self.beta2, self.adam_eps,
                        self.weight_decay, self.clip_norm)
        return TrainConfig(self.alpha, self.batch_size, self.epochs, self.seed, opt)

    # serialisation
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_assignments(pairs, source: str = "override") -> dict:
    """Parse ``key=value`` strings, rejecting unknown keys."""
    out = {}
    for lineno, raw in enumerate(pairs, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        text = Path(path).read_text()
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides))
    return RunConfig(**values)
