"""Command-line interface: ``radseq {train,eval,extract,gradcheck,split}``.

Exit codes: 0 success, 1 validation error (including a failed gradient
check), 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import data as D
from . import gradcheck as G
from . import sequencer as S
from .errors import DataError, ValidationError
from .metrics import evaluate
from .training import TrainConfig, balanced_split, train

SCALES = {"paper": S.paper_default_spec, "reduced": S.reduced_spec}


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.__dict__, "seed": args.seed})
    spec, head = SCALES[args.scale]()
    manifest = D.load_manifest(args.manifest)
    train(manifest, spec, head, config, checkpoint_path=args.out, log_stream=sys.stdout)
    return 0


def _stats_from_meta(meta: dict) -> D.NormalizationStats:
    norm = meta.get("normalization")
    return D.NormalizationStats.from_dict(norm) if norm else D.IDENTITY_STATS


def _cmd_eval(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    manifest = D.load_manifest(args.manifest)
    if args.split != "all":
        split = meta.get("split")
        if not split:
            raise ValidationError("checkpoint has no split record; use --split all")
        train_m, test_m = balanced_split(manifest, split["per_class"], split["seed"])
        manifest = test_m if args.split == "test" else train_m
    report = evaluate(model, manifest, _stats_from_meta(meta), split=args.split)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def write_sequence(seq: np.ndarray, path) -> None:
    """u64 little-endian length, then float32 little-endian values."""
    Path(path).write_bytes(struct.pack("<Q", seq.size) + np.asarray(seq, dtype="<f4").tobytes())


def read_sequence(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 4 * n:
        raise DataError(f"{path}: sequence file length does not match its header")
    return np.frombuffer(raw[8:], dtype="<f4").astype(np.float32)


def _cmd_extract(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    _, h, w = model.spec.input_shape
    image = D.normalize(D.load_image(args.image, h, w), _stats_from_meta(meta))
    write_sequence(S.extract_sequence(model, image), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    results = G.check_kernels(args.seed) + G.check_network(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {G.TOLERANCE:g}")
    return 1 if failed else 0


def _cmd_split(args) -> int:
    manifest = D.load_manifest(args.manifest)
    train_m, test_m = balanced_split(manifest, args.per_class, args.seed)
    D.write_manifest(train_m, args.out_train)
    D.write_manifest(test_m, args.out_test)
    print(json.dumps({"train": train_m.class_counts(), "test": test_m.class_counts()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radseq", description="Two-column radiomic sequencer")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="discover a sequencer from a labelled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", choices=sorted(SCALES), default="paper")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="sensitivity / specificity report for a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("extract", help="write the radiomic sequence of one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--scale", choices=["reduced"], default="reduced")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("split", help="balanced train / test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--per-class", type=int, default=473)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=_cmd_split)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
