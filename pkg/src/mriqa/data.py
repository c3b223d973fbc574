"""Manifest ingestion, synthetic references and synthetic distortions."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import IoError, ParseError, RangeError
from .imaging import Image
from .rng import Rng

HEADER = ("dist_path", "ref_path", "score", "ref_id")
SPLITS = ("train", "test")
KINDS = ("blur", "noise", "quantize", "contrast")

BLUR_SIGMA = (0.5, 1.0, 2.0, 4.0, 8.0)
NOISE_SIGMA = (2.0, 5.0, 10.0, 20.0, 40.0)  # in 8-bit units
QUANT_LEVELS = (64, 32, 16, 8, 4)
CONTRAST = (0.9, 0.75, 0.6, 0.45, 0.3)


@dataclass
class ManifestEntry:
    dist_path: str
    ref_path: str
    score: float
    ref_id: str
    split: str = "train"


def load_manifest(path, seed: int = 0, train_fraction: float = 0.8, check_files: bool = True) -> list[ManifestEntry]:
    """Read a manifest CSV; relative paths resolve against the manifest's directory.

    Without a ``split`` column, references are shuffled with ``seed`` and the
    first ``round(train_fraction * n_refs)`` go to train, so no reference
    straddles the split.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty manifest")
    header = [h.strip() for h in rows[0]]
    if tuple(header[:4]) != HEADER or len(header) > 5 or (len(header) == 5 and header[4] != "split"):
        raise ParseError(f"{path}:1: header must be {','.join(HEADER)}[,split], got {','.join(header)}")
    has_split = len(header) == 5
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        dist, ref, score, ref_id = (c.strip() for c in row[:4])
        try:
            value = float(score)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: score {score!r} is not a number") from None
        if not math.isfinite(value):
            raise ParseError(f"{path}:{lineno}: score {score!r} is not finite")
        split = row[4].strip() if has_split else "train"
        if split not in SPLITS:
            raise ParseError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        entry = ManifestEntry(os.path.join(base, dist), os.path.join(base, ref), value, ref_id, split)
        if check_files:
            for p in (entry.dist_path, entry.ref_path):
                if not os.path.isfile(p):
                    raise IoError(f"{path}:{lineno}: missing file {p}")
        entries.append(entry)
    if not has_split:
        assign_split(entries, seed, train_fraction)
    return entries


def assign_split(entries: list[ManifestEntry], seed: int = 0, train_fraction: float = 0.8) -> None:
    refs = sorted({e.ref_id for e in entries})
    Rng(seed).shuffle(refs)
    n_train = int(math.floor(train_fraction * len(refs) + 0.5))
    train_refs = set(refs[:n_train])
    for e in entries:
        e.split = "train" if e.ref_id in train_refs else "test"


def write_manifest(entries: list[ManifestEntry], path, with_split: bool = False, base=None) -> None:
    """Write entries with paths relative to ``base`` (default: the manifest's directory)."""
    base = base or os.path.dirname(os.path.abspath(os.fspath(path)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER + (("split",) if with_split else ()))
        for e in entries:
            row = [os.path.relpath(e.dist_path, base), os.path.relpath(e.ref_path, base), repr(e.score), e.ref_id]
            w.writerow(row + ([e.split] if with_split else []))


def synth_distort(ref: Image, kind: str, level: int, rng: Rng, strength: float | None = None) -> Image:
    """Degrade ``ref`` with one of the synthetic distortion families.

    ``strength`` overrides the level's parameter (sigma, quantisation levels or
    contrast factor) and is meant for tests.
    """
    if kind not in KINDS:
        raise RangeError(f"unknown distortion kind {kind!r}")
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= 5:
        raise RangeError(f"level must be an integer in 1..5, got {level!r}")
    x = ref.data.astype(np.float64)
    if kind == "blur":
        sigma = BLUR_SIGMA[level - 1] if strength is None else strength
        y = gaussian_filter(x, sigma=(sigma, sigma, 0), mode="reflect") if sigma > 0 else x
    elif kind == "noise":
        sigma = NOISE_SIGMA[level - 1] if strength is None else strength
        y = x + rng.numpy().standard_normal(x.shape) * sigma
    elif kind == "quantize":
        n = QUANT_LEVELS[level - 1] if strength is None else int(strength)
        step = 255.0 / (n - 1)
        y = np.round(x / step) * step
    else:
        f = CONTRAST[level - 1] if strength is None else strength
        y = 127.5 + f * (x - 127.5)
    return Image(np.clip(np.round(y), 0, 255).astype(np.uint8))


def synth_score(level: int) -> float:
    """Mean-opinion-style target for a synthetic level: 5 (mild) down to 1 (severe)."""
    return float(6 - level)


def make_reference(size: int, rng: Rng) -> Image:
    """Procedural textured reference: smooth colour field, gratings and solid shapes."""
    g = rng.numpy()
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, 3))
    for c in range(3):
        a, b, d = g.uniform(-1, 1, 3)
        img[..., c] = 0.5 + 0.25 * (a * xx + b * yy) + 0.1 * d
    for _ in range(4):
        freq = g.uniform(4, 40)
        theta = g.uniform(0, np.pi)
        phase = g.uniform(0, 2 * np.pi)
        amp = g.uniform(0.05, 0.2)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        img += amp * wave[..., None] * g.uniform(0.3, 1.0, 3)
    for _ in range(12):
        cx, cy = g.uniform(0, 1, 2)
        r = g.uniform(0.03, 0.15)
        color = g.uniform(0, 1, 3)
        if g.uniform() < 0.5:
            sel = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            sel = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * g.uniform(0.3, 1.5))
        img[sel] = 0.3 * img[sel] + 0.7 * color
    return Image(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))
