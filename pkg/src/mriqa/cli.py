"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 data/format error.
Errors are reported as a single JSON line on stderr.  Output files are written
to temporary names and renamed only once every output is ready.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import torch

from . import data as datamod
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .config import load_config
from .errors import ConfigError, IoError, MRIQAError
from .imaging import load_png, save_mask_png, save_png
from .pipeline import ImageCache, evaluate, mask_pair, predict_tta, sample_pair, train
from .rng import Rng

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3


class UsageError(MRIQAError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class Outputs:
    """Collects output writers and commits them with temp-file-then-rename."""

    def __init__(self):
        self.pending = []

    def add(self, path, writer):
        self.pending.append((os.fspath(path), writer))

    def commit(self):
        for path, _ in self.pending:
            if os.path.isdir(path):
                raise IoError(f"cannot write {path}: is a directory")
        staged = []
        try:
            for path, writer in self.pending:
                directory = os.path.dirname(os.path.abspath(path))
                try:
                    os.makedirs(directory, exist_ok=True)
                    fd, tmp = tempfile.mkstemp(prefix=".mriqa-", dir=directory)
                    os.close(fd)
                except OSError as exc:
                    raise IoError(f"cannot write {path}: {exc}") from exc
                staged.append((tmp, path))
                writer(tmp)
            for tmp, path in staged:
                os.replace(tmp, path)
        except BaseException:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.remove(tmp)
            raise


def write_text(text: str):
    def writer(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    return writer


def emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def configs(args):
    bcfg, hcfg, tcfg = load_config(args.config)
    if args.seed is not None:
        bcfg.seed = hcfg.seed = tcfg.seed = args.seed
    return bcfg, hcfg, tcfg


def sidecar_paths(out: str) -> tuple[str, str]:
    stem, _ = os.path.splitext(out)
    return stem + "_maska.png", stem + "_maskb.png"


def cmd_mask(args) -> int:
    _, _, tcfg = configs(args)
    tcfg.mask_mode = args.mode
    if args.ratio is not None:
        tcfg.mask_ratio = args.ratio
    tcfg.validate()
    rng = Rng(tcfg.seed)
    dist, ref = load_png(args.dist), load_png(args.ref)
    gdst, gref = sample_pair(dist, ref, tcfg, rng)
    m = mask_pair(gdst, gref, tcfg, rng)
    outs = Outputs()
    outs.add(args.out, lambda p: save_png(m.image, p))
    summary = {
        "image": args.out,
        "mode": m.mode,
        "mask_a_ones": int(m.mask_a.bits.sum()),
        "mask_b_ones": int(m.mask_b.bits.sum()),
        "mask_b_cells": int(m.mask_b.bits.size),
    }
    if not args.no_sidecar:
        pa, pb = sidecar_paths(args.out)
        outs.add(pa, lambda p: save_mask_png(m.mask_a.bits, p))
        outs.add(pb, lambda p: save_mask_png(m.mask_b.bits, p))
        summary.update(mask_a=pa, mask_b=pb)
    outs.commit()
    emit(summary)
    return EXIT_OK


def cmd_synth(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in datamod.KINDS:
            raise UsageError(f"unknown distortion kind {k!r}")
    if not 1 <= args.levels <= 5:
        raise UsageError("--levels must lie in 1..5")
    root = Rng(args.seed or 0)
    outs = Outputs()
    refs = []
    if args.generate:
        for r in range(args.generate):
            img = datamod.make_reference(args.size, root.spawn(r))
            path = os.path.join(args.refs, f"ref{r:03d}.png")
            outs.add(path, lambda p, img=img: save_png(img, p))
            refs.append((path, img))
    else:
        if not os.path.isdir(args.refs):
            raise IoError(f"reference directory {args.refs} does not exist")
        for name in sorted(os.listdir(args.refs)):
            if name.lower().endswith(".png"):
                path = os.path.join(args.refs, name)
                refs.append((path, load_png(path)))
        if not refs:
            raise IoError(f"no PNG references in {args.refs}")
    entries = []
    for r, (ref_path, ref) in enumerate(refs):
        stem = os.path.splitext(os.path.basename(ref_path))[0]
        for ki, kind in enumerate(kinds):
            for level in range(1, args.levels + 1):
                img = datamod.synth_distort(ref, kind, level, root.spawn(1000 + (r * 16 + ki) * 8 + level))
                path = os.path.join(args.out, f"{stem}_{kind}_{level}.png")
                outs.add(path, lambda p, img=img: save_png(img, p))
                entries.append(
                    datamod.ManifestEntry(os.path.abspath(path), os.path.abspath(ref_path), datamod.synth_score(level), stem)
                )
    manifest = os.path.join(args.out, "manifest.csv")
    base = os.path.dirname(os.path.abspath(manifest))
    outs.add(manifest, lambda p: datamod.write_manifest(entries, p, base=base))
    outs.commit()
    emit({"manifest": manifest, "images": len(entries), "references": len(refs)})
    return EXIT_OK


def cmd_train(args) -> int:
    bcfg, hcfg, tcfg = configs(args)
    for flag, field in (("epochs", "epochs"), ("lr", "lr"), ("batch", "batch"), ("mask_mode", "mask_mode"), ("ratio", "mask_ratio")):
        value = getattr(args, flag)
        if value is not None:
            setattr(tcfg, field, value)
    for name in args.ablate or []:
        setattr(tcfg, f"use_{name}", False)
    tcfg.validate()
    entries = datamod.load_manifest(args.manifest, seed=tcfg.seed)
    lines = []

    def on_epoch(record, model):
        line = json.dumps(record, sort_keys=True)
        lines.append(line)
        print(line, flush=True)

    model = train(entries, bcfg, hcfg, tcfg, on_epoch=on_epoch)
    log_path = args.log or args.out + ".log.jsonl"
    outs = Outputs()
    outs.add(args.out, lambda p: save_checkpoint(model, p))
    outs.add(log_path, write_text("".join(line + "\n" for line in lines)))
    outs.commit()
    return EXIT_OK


def cmd_score(args) -> int:
    model = load_checkpoint(args.ckpt)
    seed = model.train_cfg.seed if args.seed is None else args.seed
    dist, ref = load_png(args.dist), load_png(args.ref)
    emit({"score": predict_tta(dist, ref, model, args.tta, Rng(seed))})
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    seed = model.train_cfg.seed if args.seed is None else args.seed
    cache = ImageCache()
    reports = []
    for path in [args.manifest] + list(args.cross or []):
        entries = datamod.load_manifest(path, seed=seed)
        if args.split != "all":
            entries = [e for e in entries if e.split == args.split]
        reports.append(evaluate(model, entries, os.path.basename(path), args.tta, seed, cache))
    if args.out:
        outs = Outputs()
        outs.add(args.out, write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n"))
        outs.commit()
    for rep in reports:
        emit(rep)
    return EXIT_OK


def cmd_info(args) -> int:
    header, blob = read_header(args.ckpt)
    header["blob_bytes"] = len(blob)
    print(json.dumps(header, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit seed (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config with backbone/head/train sections")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="torch worker threads")
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS, help="force single-threaded deterministic mode")

    parser = Parser(prog="mriqa", description="Mask-reference image quality assessment", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("mask", parents=[common], help="AGCS-sample and mask a distorted/reference pair")
    p.add_argument("--dist", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("diff", "random"), default="diff")
    p.add_argument("--ratio", type=float)
    p.add_argument("--no-sidecar", action="store_true")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("synth", parents=[common], help="generate distorted images and a manifest")
    p.add_argument("--refs", required=True, help="directory of reference PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default=",".join(datamod.KINDS))
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--generate", type=int, default=0, help="first write N procedural references into --refs")
    p.add_argument("--size", type=int, default=384, help="side of generated references")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", nargs="+", choices=("agcs", "mg", "fmm"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--mask-mode", dest="mask_mode", choices=("diff", "random"))
    p.add_argument("--ratio", type=float)
    p.add_argument("--log", help="epoch log path (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score one pair with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tta", type=int, default=8)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="SRCC/PLCC report per manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cross", nargs="+")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--tta", type=int, default=8)
    p.add_argument("--out", help="also write the reports as a JSON array")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", parents=[common], help="dump a checkpoint header")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_info)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name, default in (("seed", None), ("config", None), ("threads", None), ("deterministic", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        elif args.threads is not None:
            torch.set_num_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        code = EXIT_USAGE
        err = exc
    except IoError as exc:
        code, err = EXIT_IO, exc
    except MRIQAError as exc:
        code, err = EXIT_DATA, exc
    except OSError as exc:
        code, err = EXIT_IO, exc
    print(json.dumps({"error": type(err).__name__, "message": str(err), "exit": code}), file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
