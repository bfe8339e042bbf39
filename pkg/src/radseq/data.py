"""Dataset manifests, PPM decoding, resizing and per-channel normalization."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DecodeError, ParseError, ValidationError

BENIGN, MALIGNANT = 0, 1
LABELS = {"benign": BENIGN, "malignant": MALIGNANT}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
HEADER = ["path", "label"]


@dataclass(frozen=True)
class Record:
    path: str  # as written in the manifest, relative to the manifest directory
    label: int


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = field(default_factory=Path)
    note: str = ""

    def __post_init__(self):
        seen = set()
        for i, r in enumerate(self.records):
            if r.label not in LABEL_NAMES:
                raise ValidationError(f"record {i} ({r.path}): label {r.label!r} is not 0 or 1")
            key = os.path.normpath(r.path)
            if key in seen:
                raise ValidationError(f"duplicate path in manifest: {r.path}")
            seen.add(key)

    def __len__(self):
        return len(self.records)

    def resolve(self, record: Record) -> Path:
        return self.root / record.path

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def class_counts(self) -> dict[str, int]:
        labels = self.labels
        return {name: int(np.sum(labels == k)) for k, name in sorted(LABEL_NAMES.items())}

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in indices], self.root, self.note)


def parse_manifest(text: str, root=".", note: str = "") -> DatasetManifest:
    lines = text.split("\n")
    if lines[0].rstrip("\r") != ",".join(HEADER):
        raise ParseError(f"header must be exactly {','.join(HEADER)!r}", line=1)
    records = []
    seen: dict[str, int] = {}
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
        path, label = row[0], row[1].strip()
        if label not in LABELS:
            raise ParseError(f"unknown label {label!r} (expected benign or malignant)", line=lineno)
        if not path:
            raise ParseError("empty path", line=lineno)
        key = os.path.normpath(path)
        if key in seen:
            raise ValidationError(f"line {lineno}: duplicate path {path!r} (first on line {seen[key]})")
        seen[key] = lineno
        records.append(Record(path, LABELS[label]))
    return DatasetManifest(records, Path(root), note)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    return parse_manifest(text, root=path.parent, note=f"loaded from {path}")


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest CSV, rewriting paths relative to the new file's directory."""
    path = Path(path)
    out_dir = path.parent
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in manifest.records:
        target = manifest.resolve(r)
        rel = os.path.relpath(target, out_dir) if manifest.root.resolve() != out_dir.resolve() else r.path
        w.writerow([Path(rel).as_posix(), LABEL_NAMES[r.label]])
    path.write_text(buf.getvalue(), encoding="utf-8")


# -- images ------------------------------------------------------------------


def _ppm_header(data: bytes, path) -> tuple[bytes, list[int], int]:
    """Parse a binary PNM header; returns (magic, [width, height, maxval], payload offset)."""
    if data[:2] not in (b"P6", b"P5"):
        raise DecodeError(path, 0, f"unsupported magic {data[:2]!r} (expected P6 or P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        start = pos
        # whitespace and comments between tokens
        while pos < len(data) and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                pos += 1
        if pos == start and fields:
            raise DecodeError(path, pos, "expected whitespace between header fields")
        tok_start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == tok_start:
            raise DecodeError(path, pos, "malformed header: expected a decimal number")
        fields.append(int(data[tok_start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError(path, pos, "header must end with a single whitespace byte")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(path, pos, f"invalid image size {width}x{height}")
    if not 0 < maxval < 256:
        raise DecodeError(path, pos, f"only 8-bit images are supported (maxval {maxval})")
    return data[:2], fields, pos


def decode_ppm(data: bytes, path="<bytes>") -> np.ndarray:
    """Decode binary PPM (P6) or PGM (P5) bytes into a float32 3 x H x W tensor in [0, 1].

    Samples are divided by the header's maxval (255 for ordinary files).
    Greyscale images are replicated across the three channels.
    """
    magic, (width, height, maxval), offset = _ppm_header(data, path)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise DecodeError(
            path, offset + len(payload), f"truncated payload: expected {need} bytes, found {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    img = raw.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval)
    if channels == 1:
        img = np.repeat(img, 3, axis=0)
    return np.ascontiguousarray(img)


def decode_image(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return decode_ppm(data, path)


def encode_ppm(image: np.ndarray) -> bytes:
    """Inverse of ``decode_ppm`` for 3 x H x W tensors in [0, 1] (values rounded)."""
    c, h, w = image.shape
    if c != 3:
        raise ValidationError(f"expected 3 channels, got {c}")
    raw = np.clip(np.rint(image * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def _resize_axis(x: np.ndarray, out: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    if n == out:
        return x
    # half-pixel centres: output i samples input coordinate (i + 0.5) * n / out - 0.5
    src = (np.arange(out, dtype=np.float64) + 0.5) * (n / out) - 0.5
    src = np.clip(src, 0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = (src - i0).astype(x.dtype)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = out
    # a + f * (b - a) reproduces a exactly wherever a == b
    return a + frac.reshape(shape) * (b - a)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a C x H x W tensor with half-pixel sampling centres."""
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"target size must be positive, got {out_h}x{out_w}")
    if image.ndim != 3 or image.shape[1] < 1 or image.shape[2] < 1:
        raise ValidationError(f"expected a C x H x W image, got shape {image.shape}")
    if image.shape[1:] == (out_h, out_w):
        return image.copy()
    out = _resize_axis(_resize_axis(image, out_h, 1), out_w, 2)
    # guard against one-ulp overshoot from the lerp
    return np.clip(out, image.min(), image.max()).astype(image.dtype, copy=False)


# -- normalization --------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValidationError("normalization stats need exactly 3 channels")
        if any(not s > 0 for s in self.std):
            raise ValidationError(f"std must be positive per channel, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        try:
            return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed stats object: {e!r}") from e


IDENTITY_STATS = NormalizationStats((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def save_stats(stats: NormalizationStats, path) -> None:
    Path(path).write_text(json.dumps(stats.to_dict()) + "\n", encoding="utf-8")


def load_stats(path) -> NormalizationStats:
    try:
        return NormalizationStats.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise DataError(f"cannot read stats file {path}: {e}") from e


def compute_stats(images: np.ndarray, min_std: float = 1e-6) -> NormalizationStats:
    """Per-channel mean/std over an ``N x 3 x H x W`` stack (the training split only)."""
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[0] == 0:
        raise ValidationError(f"need a non-empty N x 3 x H x W stack, got {images.shape}")
    x = images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = np.maximum(x.std(axis=(0, 2, 3)), min_std)
    return NormalizationStats(tuple(map(float, mean)), tuple(map(float, std)))


def normalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """``(value - mean[c]) / std[c]`` for a C x H x W image or N x C x H x W stack."""
    mean = np.asarray(stats.mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(stats.std, dtype=np.float64).reshape(3, 1, 1)
    if np.any(std <= 0):
        raise ValidationError("std must be positive")
    return ((image - mean) / std).astype(image.dtype, copy=False)


def load_image(path, height: int, width: int) -> np.ndarray:
    """decode -> resize; normalization is applied separately once stats are known."""
    return resize_bilinear(decode_image(path), height, width)


def load_images(manifest: DatasetManifest, height: int, width: int) -> np.ndarray:
    out = np.empty((len(manifest), 3, height, width), dtype=np.float32)
    for i, r in enumerate(manifest.records):
        out[i] = load_image(manifest.resolve(r), height, width)
    return out
