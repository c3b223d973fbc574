"""Versioned checkpoint files.

Layout: ``b"MRIQ1"`` | uint32 little-endian header length | UTF-8 JSON header |
little-endian float32 parameters in header-manifest order.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np
import torch

from .backbone import BackboneConfig
from .config import TrainConfig, build
from .errors import ConfigError, FormatError, IoError
from .head import HeadConfig
from .model import MRNet, QualityModel

MAGIC = b"MRIQ1"
VERSION = 1


def _tensors(net: MRNet) -> list[tuple[str, torch.Tensor]]:
    """Parameters and persistent buffers in a fixed order."""
    return list(net.state_dict(keep_vars=True).items())


def _header(model: QualityModel) -> dict:
    return {
        "version": VERSION,
        "backbone": model.backbone_cfg.to_dict(),
        "head": model.head_cfg.to_dict(),
        "train": model.train_cfg.to_dict(),
        "score_norm": {
            "min": model.score_min,
            "max": model.score_max,
            "higher_is_better": model.train_cfg.higher_is_better,
        },
        "weights_source": model.weights_source,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in _tensors(model.net)],
    }


def to_bytes(model: QualityModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True).encode("utf-8")
    blob = b"".join(
        p.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes() for _, p in _tensors(model.net)
    )
    return MAGIC + struct.pack("<I", len(header)) + header + blob


def save_checkpoint(model: QualityModel, path) -> None:
    path = os.fspath(path)
    try:
        with open(path, "wb") as fh:
            fh.write(to_bytes(model))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def read_header(path) -> tuple[dict, bytes]:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 9 or raw[:5] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MRIQ1 checkpoint")
    (n,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + n:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[9 : 9 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    return header, raw[9 + n :]


def _compare(section: str, stored: dict, expected) -> None:
    want = expected.to_dict()
    for key in sorted(set(stored) | set(want)):
        if stored.get(key) != want.get(key):
            raise FormatError(f"config mismatch in {section}.{key}: checkpoint has {stored.get(key)!r}, expected {want.get(key)!r}")


def load_checkpoint(path, backbone_cfg: BackboneConfig | None = None, head_cfg: HeadConfig | None = None) -> QualityModel:
    """Load a checkpoint; optional expected configs must match the stored ones field by field."""
    header, blob = read_header(path)
    if backbone_cfg is not None:
        _compare("backbone", header["backbone"], backbone_cfg)
    if head_cfg is not None:
        _compare("head", header["head"], head_cfg)
    try:
        bcfg = build(BackboneConfig, header["backbone"])
        hcfg = build(HeadConfig, header["head"])
        tcfg = build(TrainConfig, header["train"])
        net = MRNet(bcfg, hcfg, use_fmm=tcfg.use_fmm)
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: invalid config in header: {exc}") from exc
    named = _tensors(net)
    manifest = header.get("params", [])
    if len(manifest) != len(named):
        raise FormatError(f"{path}: header lists {len(manifest)} parameters, model has {len(named)}")
    for item, (name, p) in zip(manifest, named):
        if item["name"] != name or list(item["shape"]) != list(p.shape):
            raise FormatError(f"{path}: parameter mismatch at {name}: header has {item['name']} {item['shape']}")
    total = sum(p.numel() for _, p in named)
    if len(blob) != 4 * total:
        raise FormatError(f"{path}: parameter blob is {len(blob)} bytes, expected {4 * total}")
    values = np.frombuffer(blob, dtype="<f4")
    offset = 0
    with torch.no_grad():
        for _, p in named:
            n = p.numel()
            p.copy_(torch.from_numpy(values[offset : offset + n].copy()).view_as(p))
            offset += n
    net.eval()
    norm = header.get("score_norm", {})
    return QualityModel(net, bcfg, hcfg, tcfg, norm.get("min", 0.0), norm.get("max", 1.0), header.get("weights_source", "init"))
