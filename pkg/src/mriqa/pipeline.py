"""Sample preparation, training, test-time aggregation and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from PIL import Image as PILImage

from . import agcs, maskgen
from .agcs import SampledGrid
from .backbone import BackboneConfig
from .config import TrainConfig
from .data import ManifestEntry
from .errors import ConfigError, DimensionMismatch
from .head import HeadConfig
from .imaging import Image, load_png, pad_to_min, random_crop_pair
from .metrics import plcc, srcc
from .model import QualityModel, to_batch
from .optim import adam_init, adam_step, step_lr
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) uint8 masked image
    mask_a: np.ndarray
    mask_b: np.ndarray


def crop_sizes(side: int, cfg: TrainConfig) -> list[int]:
    return [c for c in cfg.crop_menu if cfg.input_size <= c <= side]


def center_resize(img: Image, size: int) -> Image:
    """Resize the shorter side to ``size`` (bilinear) and take the central square."""
    h, w = img.height, img.width
    scale = size / min(h, w)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    resized = np.asarray(PILImage.fromarray(img.data).resize((nw, nh), PILImage.BILINEAR))
    x, y = (nw - size) // 2, (nh - size) // 2
    return Image(resized[y : y + size, x : x + size])


def sample_pair(dist: Image, ref: Image, cfg: TrainConfig, rng: Rng) -> tuple[SampledGrid, SampledGrid]:
    """Crop a random-size patch pair and reduce it to the input lattice."""
    if dist.data.shape != ref.data.shape:
        raise DimensionMismatch(f"distorted {dist.width}x{dist.height} vs reference {ref.width}x{ref.height}")
    g = cfg.grid
    if not cfg.use_agcs:
        return (
            SampledGrid.from_image(center_resize(dist, cfg.input_size), g, g),
            SampledGrid.from_image(center_resize(ref, cfg.input_size), g, g),
        )
    dist = pad_to_min(dist, cfg.input_size)
    ref = pad_to_min(ref, cfg.input_size)
    # side lengths drawn independently per axis from the capped menu
    wp = rng.choice(crop_sizes(dist.width, cfg))
    hp = rng.choice(crop_sizes(dist.height, cfg))
    pdst, pref = random_crop_pair(dist, ref, wp, hp, rng, multiple=g)
    spec = agcs.make_grid_spec(wp, hp, cfg.input_size, cfg.input_size, rng, g, g)
    return agcs.sample_grids(pdst, spec), agcs.sample_grids(pref, spec)


def mask_pair(gdst: SampledGrid, gref: SampledGrid, cfg: TrainConfig, rng: Rng) -> maskgen.MaskedImage:
    if not cfg.use_mg:
        a, b = maskgen.empty_masks(*gdst.grid_shape)
        return maskgen.MaskedImage(gdst.assemble(), a, b, mode="none")
    if cfg.mask_mode == "random":
        return maskgen.random_ratio_mask(gdst, gref, cfg.mask_ratio, rng)
    return maskgen.diff_mask(gdst, gref, rng)


def prepare_sample(dist: Image, ref: Image, cfg: TrainConfig, rng: Rng, flips: bool = True) -> Sample:
    """Crop, grid-sample, mask and (optionally) randomly flip one image pair.

    Each flip is applied to the image and to both masks so that mask cells stay
    aligned with the feature positions they describe.
    """
    gdst, gref = sample_pair(dist, ref, cfg, rng)
    m = mask_pair(gdst, gref, cfg, rng)
    img, a, b = m.image.data, m.mask_a.bits, m.mask_b.bits
    if flips:
        if rng.coin(0.5):
            img, a, b = img[:, ::-1], a[:, ::-1], b[:, ::-1]
        if rng.coin(0.5):
            img, a, b = img[::-1], a[::-1], b[::-1]
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(a), np.ascontiguousarray(b))


def batch_tensors(samples: list[Sample], dtype=torch.float32):
    x = to_batch([s.image for s in samples], dtype)
    ma = torch.from_numpy(np.stack([s.mask_a for s in samples]))
    mb = torch.from_numpy(np.stack([s.mask_b for s in samples]))
    return x, ma, mb


def loss_fn(pred: torch.Tensor, target: torch.Tensor, kind: str = "mae") -> torch.Tensor:
    if kind == "mae":
        return (pred - target).abs().mean()
    if kind == "mse":
        return ((pred - target) ** 2).mean()
    raise ConfigError(f"unknown loss {kind!r}")


class ImageCache:
    def __init__(self):
        self._images: dict[str, Image] = {}

    def __call__(self, path: str) -> Image:
        if path not in self._images:
            self._images[path] = load_png(path)
        return self._images[path]


CALIBRATION_STREAM = 1 << 40


@torch.no_grad()
def calibrate_head(model: QualityModel, samples: list[Sample], targets: np.ndarray, chunk: int = 16) -> None:
    """Data-dependent head initialisation.

    Sets the head's standardisation buffers from the pooled vectors of
    ``samples`` and shifts the output bias so the mean prediction equals the
    mean target.  The pooled features of a randomly initialised backbone differ
    between images by a few percent of a large shared offset; without the
    standardisation the head starts on a plateau it does not leave.
    """
    net = model.net
    dtype = next(net.parameters()).dtype
    vecs = []
    for start in range(0, len(samples), chunk):
        x, ma, mb = batch_tensors(samples[start : start + chunk], dtype)
        vecs.append(net.head.pooled(net.features(x, ma, mb)))
    vec = torch.cat(vecs)
    if net.head.cfg.standardize:
        net.head.set_stats(vec)
    net.head.fc2.bias.add_(float(np.mean(targets)) - net.head.mlp(vec).mean())


def train(
    entries: list[ManifestEntry],
    backbone_cfg: BackboneConfig,
    head_cfg: HeadConfig,
    cfg: TrainConfig,
    on_epoch: Callable[[dict, QualityModel], bool | None] | None = None,
    model: QualityModel | None = None,
    cache: ImageCache | None = None,
) -> QualityModel:
    """Train on the ``train`` split of ``entries``.

    A freshly created model gets a data-dependent head initialisation from up
    to ``cfg.calibrate`` training samples (see :func:`calibrate_head`).

    ``on_epoch`` receives the epoch record ``{"epoch", "lr", "loss"}`` and the
    model after every epoch; returning True stops training early.
    """
    cfg.validate()
    data = [e for e in entries if e.split == "train"]
    if not data:
        raise ConfigError("training split is empty")
    fresh = model is None
    if fresh:
        model = QualityModel.create(backbone_cfg, head_cfg, cfg)
    scores = np.array([e.score for e in data])
    model.score_min = float(scores.min()) if cfg.score_min is None else cfg.score_min
    model.score_max = float(scores.max()) if cfg.score_max is None else cfg.score_max
    if not model.score_max > model.score_min:
        raise ConfigError("training scores are constant; set score_min/score_max explicitly")
    model.train_cfg = cfg
    model.net.use_fmm = cfg.use_fmm
    targets = model.normalize(scores)
    cache = cache or ImageCache()
    net = model.net
    dtype = next(net.parameters()).dtype
    params = list(net.parameters())
    state = adam_init(params)
    root = Rng(cfg.seed)
    if fresh and cfg.calibrate:
        stream = root.spawn(CALIBRATION_STREAM)
        picked = list(range(len(data)))[: cfg.calibrate]
        samples = [prepare_sample(cache(data[i].dist_path), cache(data[i].ref_path), cfg, stream.spawn(i)) for i in picked]
        calibrate_head(model, samples, targets[picked], cfg.batch)
    net.train()
    for epoch in range(cfg.epochs):
        lr = step_lr(cfg.lr, epoch, cfg.decay, cfg.decay_every)
        stream = root.spawn(epoch)
        order = list(range(len(data)))
        stream.spawn(0).shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            samples = [
                prepare_sample(cache(data[i].dist_path), cache(data[i].ref_path), cfg, stream.spawn(1 + i))
                for i in idx
            ]
            x, ma, mb = batch_tensors(samples, dtype)
            target = torch.as_tensor(targets[idx], dtype=dtype)
            vec = net.head.pooled(net.features(x, ma, mb))
            loss = loss_fn(net.head.mlp(vec), target, cfg.loss)
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            adam_step(params, list(grads), state, lr)
            if net.head.cfg.standardize:
                net.head.track(vec.detach())
            total += float(loss.detach()) * len(idx)
        record = {"epoch": epoch, "lr": lr, "loss": total / len(data)}
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, record["loss"])
        if on_epoch is not None and on_epoch(record, model):
            break
    net.eval()
    return model


@torch.no_grad()
def predict_tta(dist: Image, ref: Image, model: QualityModel, n: int = 8, rng: Rng | None = None) -> float:
    """Mean score over ``n`` independently cropped, masked and flipped samples."""
    if dist.data.shape != ref.data.shape:
        raise DimensionMismatch(f"distorted {dist.width}x{dist.height} vs reference {ref.width}x{ref.height}")
    rng = rng if rng is not None else Rng(model.train_cfg.seed)
    net = model.net
    was_training = net.training
    net.eval()
    samples = [prepare_sample(dist, ref, model.train_cfg, rng.spawn(k)) for k in range(n)]
    x, ma, mb = batch_tensors(samples, next(net.parameters()).dtype)
    scores = net(x, ma, mb)
    net.train(was_training)
    return float(scores.double().mean())


def predict_entries(model: QualityModel, entries: list[ManifestEntry], n: int = 8, seed: int = 0, cache=None) -> np.ndarray:
    cache = cache or ImageCache()
    root = Rng(seed)
    return np.array(
        [predict_tta(cache(e.dist_path), cache(e.ref_path), model, n, root.spawn(i)) for i, e in enumerate(entries)]
    )


def evaluate(model: QualityModel, entries: list[ManifestEntry], name: str = "dataset", n: int = 8, seed: int = 0, cache=None) -> dict:
    """Metrics report ``{dataset, n, srcc, plcc, seed}`` over all given entries.

    Subjective scores are min-max normalised per dataset (flipped for
    lower-is-better scales) before correlating with the predictions.
    """
    pred = predict_entries(model, entries, n, seed, cache)
    raw = np.array([e.score for e in entries], dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    target = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    if not model.train_cfg.higher_is_better:
        target = 1.0 - target
    s = srcc(pred, target)
    sign = 1.0 if model.train_cfg.higher_is_better else -1.0
    assert abs(s - sign * srcc(pred, raw)) < 1e-12
    return {"dataset": name, "n": len(entries), "srcc": s, "plcc": plcc(pred, target), "seed": seed}


def cross_eval(model: QualityModel, manifests: list[tuple[str, list[ManifestEntry]]], n: int = 8, seed: int = 0) -> list[dict]:
    """One report per (name, entries) test set."""
    return [evaluate(model, entries, name, n, seed) for name, entries in manifests]
