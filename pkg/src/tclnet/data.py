"""On-disk dataset format and the synthetic cyclone generator.

A dataset is a root directory with `index.csv` (header `id,filename,u,v,
eyed,split`, one row per sample) and 8-bit single-channel images (PNG or
PGM) of size 512x512. Labels are stored in input-image pixels as floats.

The generator renders logarithmic-spiral cloud fields around a uniformly
placed center (kept >= 64 px from the borders): banded intensity along
r = a*e^(b*theta) arms under a radial envelope, a dense central overcast,
smoothed value-noise texture, and for eyed samples a dark central eye disk;
non-eyed samples instead get extra central blur. With label_noise_px > 0,
train-split labels are perturbed by an isotropic Gaussian, non-eyed samples
at 3.9x the eyed scale, to emulate noisy hard-sample annotations; test-split
labels are always exact so the metric stays trustworthy.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from tclnet.errors import ConfigError, DataLoadError
from tclnet.heatmap import CenterLabel
from tclnet.imageops import bilinear_resize, from_uint8, to_uint8

IMAGE_SIZE = 512
CENTER_MARGIN = 64
INDEX_NAME = "index.csv"
INDEX_HEADER = "id,filename,u,v,eyed,split"
SPLITS = ("train", "test")
NOISE_RATIO_NON_EYED = 3.9


@dataclass(frozen=True)
class SynthParams:
    n_samples: int
    eyed_fraction: float = 0.65
    train_fraction: float = 0.8
    arm_range: tuple = (2, 4)
    band_width_range: tuple = (1.6, 3.0)   # cosine sharpening exponent
    contrast_range: tuple = (0.55, 0.95)
    eye_radius_range: tuple = (7.0, 16.0)
    noise_amp: float = 0.18
    label_noise_px: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be positive, got {self.n_samples}")
        for name in ("eyed_fraction", "train_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        lo, hi = self.arm_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"arm_range must be 1 <= lo <= hi, got {self.arm_range}")
        for name in ("band_width_range", "contrast_range", "eye_radius_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} must be 0 < lo <= hi, got {(lo, hi)}")
        if self.noise_amp < 0 or self.label_noise_px < 0:
            raise ConfigError("noise amplitudes must be nonnegative")


@dataclass(frozen=True)
class IndexEntry:
    id: str
    filename: str
    u: float
    v: float
    eyed: bool
    split: str


@dataclass
class DatasetIndex:
    root: Path
    entries: List[IndexEntry]

    def split(self, name: str) -> List[IndexEntry]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [e for e in self.entries if e.split == name]


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (512, 512) float32 in [0,1]
    label: CenterLabel
    eyed: bool


# -- synthesis --------------------------------------------------------------------


def _value_noise(rng, size, cells) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return bilinear_resize(coarse, size, size)


def render_cyclone(rng, params: SynthParams, eyed: bool):
    """Render one cloud field; returns (image float64 [0,1], cx, cy)."""
    size = IMAGE_SIZE
    cx = CENTER_MARGIN + rng.random() * (size - 2 * CENTER_MARGIN)
    cy = CENTER_MARGIN + rng.random() * (size - 2 * CENTER_MARGIN)
    arms = int(rng.integers(params.arm_range[0], params.arm_range[1] + 1))
    pitch = rng.uniform(0.18, 0.30)
    chirality = 1.0 if rng.random() < 0.5 else -1.0
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    sharp = rng.uniform(*params.band_width_range)
    contrast = rng.uniform(*params.contrast_range)
    extent = rng.uniform(150.0, 230.0)
    eye_radius = rng.uniform(*params.eye_radius_range)

    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    dx = xx - cx
    dy = yy - cy
    r = np.maximum(np.hypot(dx, dy), 1.0)
    phi = np.arctan2(dy, dx)
    # constant spiral phase along r = a*e^(b*theta) arms
    psi = arms * (chirality * phi + np.log(r) / pitch) + phase0
    band = (0.5 + 0.5 * np.cos(psi)) ** sharp
    envelope = np.exp(-((r / extent) ** 2))
    noise = (_value_noise(rng, size, 17) * 0.6
             + _value_noise(rng, size, 65) * 0.4) - 0.5

    img = (0.12
           + envelope * contrast * (0.40 + 0.60 * band)
           + 0.50 * np.exp(-((r / 70.0) ** 2))
           + params.noise_amp * noise * (0.3 + 0.7 * envelope))
    if eyed:
        img = img * (1.0 - 0.75 * np.exp(-((r / eye_radius) ** 4)))
    else:
        # no eye; soften the innermost region instead
        small = bilinear_resize(img, IMAGE_SIZE // 8, IMAGE_SIZE // 8)
        blurred = bilinear_resize(small, size, size)
        w = np.exp(-((r / 48.0) ** 2))
        img = img * (1.0 - w) + blurred * w
    return np.clip(img, 0.0, 1.0), cx, cy


def generate(params: SynthParams, out_root) -> DatasetIndex:
    """Render the dataset under out_root and write its index.

    Deterministic: a fixed seed reproduces every byte. Eyed and train counts
    are exact (round(fraction * n)), assigned by a seeded shuffle.
    """
    root = Path(out_root)
    image_dir = root / "images"
    os.makedirs(image_dir, exist_ok=True)
    n = params.n_samples
    master = np.random.default_rng(params.seed)
    n_eyed = int(round(params.eyed_fraction * n))
    eyed_flags = np.array([True] * n_eyed + [False] * (n - n_eyed))
    master.shuffle(eyed_flags)
    n_train = int(round(params.train_fraction * n))
    split_flags = np.array(["train"] * n_train + ["test"] * (n - n_train))
    master.shuffle(split_flags)

    entries = []
    digits = max(5, len(str(n - 1)))
    for i in range(n):
        rng = np.random.default_rng((params.seed, i))
        eyed = bool(eyed_flags[i])
        split = str(split_flags[i])
        img, cx, cy = render_cyclone(rng, params, eyed)
        u, v = cx, cy
        if params.label_noise_px > 0 and split == "train":
            sigma = params.label_noise_px * (1.0 if eyed else NOISE_RATIO_NON_EYED)
            u = float(np.clip(cx + rng.normal(0.0, sigma), 0.0, IMAGE_SIZE - 2))
            v = float(np.clip(cy + rng.normal(0.0, sigma), 0.0, IMAGE_SIZE - 2))
        sid = f"s{i:0{digits}d}"
        fname = f"images/{sid}.png"
        Image.fromarray(to_uint8(img), mode="L").save(root / fname, format="PNG")
        entries.append(IndexEntry(id=sid, filename=fname, u=float(u), v=float(v),
                                  eyed=eyed, split=split))

    with open(root / INDEX_NAME, "w", newline="") as fh:
        fh.write(INDEX_HEADER + "\n")
        for e in entries:
            fh.write(f"{e.id},{e.filename},{e.u!r},{e.v!r},{int(e.eyed)},{e.split}\n")
    return DatasetIndex(root=root, entries=entries)


# -- loading ----------------------------------------------------------------------


def load(root) -> DatasetIndex:
    """Parse and validate index.csv; every problem names its row."""
    root = Path(root)
    index_path = root / INDEX_NAME
    if not index_path.is_file():
        raise DataLoadError(f"no {INDEX_NAME} under {root}")
    with open(index_path, newline="") as fh:
        lines = list(csv.reader(fh))
    if not lines or ",".join(lines[0]) != INDEX_HEADER:
        got = ",".join(lines[0]) if lines else "<empty>"
        raise DataLoadError(f"{index_path}: bad header {got!r}, "
                            f"expected {INDEX_HEADER!r}")
    entries = []
    seen = set()
    for row_no, row in enumerate(lines[1:], start=1):
        if not row:
            continue
        if len(row) != 6:
            raise DataLoadError(f"{index_path} row {row_no}: expected 6 fields, "
                                f"got {len(row)}")
        sid, fname, u_s, v_s, eyed_s, split = row
        if not sid or sid in seen:
            raise DataLoadError(f"{index_path} row {row_no}: missing or "
                                f"duplicate id {sid!r}")
        seen.add(sid)
        try:
            u, v = float(u_s), float(v_s)
        except ValueError:
            raise DataLoadError(f"{index_path} row {row_no}: non-numeric "
                                f"label ({u_s!r}, {v_s!r})") from None
        if not (0.0 <= u < IMAGE_SIZE and 0.0 <= v < IMAGE_SIZE):
            raise DataLoadError(f"{index_path} row {row_no}: label ({u}, {v}) "
                                f"outside [0, {IMAGE_SIZE})")
        if eyed_s not in ("0", "1"):
            raise DataLoadError(f"{index_path} row {row_no}: eyed flag must be "
                                f"0 or 1, got {eyed_s!r}")
        if split not in SPLITS:
            raise DataLoadError(f"{index_path} row {row_no}: split must be one "
                                f"of {SPLITS}, got {split!r}")
        if not (root / fname).is_file():
            raise DataLoadError(f"{index_path} row {row_no}: missing image "
                                f"file {fname!r}")
        entries.append(IndexEntry(id=sid, filename=fname, u=u, v=v,
                                  eyed=eyed_s == "1", split=split))
    return DatasetIndex(root=root, entries=entries)


def read_sample(index: DatasetIndex, i: int) -> Sample:
    entry = index.entries[i]
    path = Path(index.root) / entry.filename
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                im = im.convert("L")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DataLoadError(f"cannot read image {path}: {exc}") from None
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise DataLoadError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, "
                            f"got {arr.shape[1]}x{arr.shape[0]}")
    return Sample(id=entry.id, image=from_uint8(arr),
                  label=CenterLabel(entry.u, entry.v), eyed=entry.eyed)


def load_split(index: DatasetIndex, split: str) -> List[Sample]:
    wanted = {e.id for e in index.split(split)}
    return [read_sample(index, i) for i, e in enumerate(index.entries)
            if e.id in wanted]
