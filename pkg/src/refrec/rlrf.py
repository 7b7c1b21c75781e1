"""RLRF interchange files: one binary record per image, plus a manifest.

Layout (little-endian):
  magic "RLRF" | version u32 | image_id u16+utf8 | class_label u16+utf8 |
  flags u8 (bit0 anomalous, bit1 mask present) | image H u32, W u32 |
  scale count L u8 | per scale C,H_j,W_j u32 | per scale C*H_j*W_j float32
  (channel-major, then rows, then columns) | optional H*W mask bytes {0,1}.

A dataset is a directory of these files plus a manifest of
"relative-path<TAB>split" lines.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

MAGIC = b"RLRF"
VERSION = 1
SPLITS = ("train", "test")


@dataclass
class FeatureRecord:
    image_id: str
    class_label: str
    is_anomalous: bool
    image_hw: tuple
    scales: list = field(default_factory=list)  # (C, H_j, W_j) float32 arrays
    pixel_mask: np.ndarray | None = None        # (H, W) uint8 in {0, 1}

    def validate(self):
        h, w = self.image_hw
        if h <= 0 or w <= 0:
            raise DataError(f"record {self.image_id}: bad image size {self.image_hw}")
        if not self.scales:
            raise DataError(f"record {self.image_id}: no feature scales")
        for j, fm in enumerate(self.scales):
            if fm.ndim != 3 or fm.dtype != np.float32:
                raise DataError(f"record {self.image_id}: scale {j} must be "
                                f"(C,H,W) float32, got {fm.shape} {fm.dtype}")
        if self.pixel_mask is not None:
            if self.pixel_mask.shape != (h, w):
                raise DataError(f"record {self.image_id}: mask {self.pixel_mask.shape} "
                                f"does not match image {self.image_hw}")
            if not np.isin(self.pixel_mask, (0, 1)).all():
                raise DataError(f"record {self.image_id}: mask values outside {{0,1}}")

    def scale_dims(self):
        return tuple(fm.shape for fm in self.scales)


def write_feature_file(record, path):
    record.validate()
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for text in (record.image_id, record.class_label):
        raw = text.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"string field too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    flags = (1 if record.is_anomalous else 0) | (2 if record.pixel_mask is not None else 0)
    h, w = record.image_hw
    parts.append(struct.pack("<BII", flags, h, w))
    parts.append(struct.pack("<B", len(record.scales)))
    for fm in record.scales:
        c, hj, wj = fm.shape
        parts.append(struct.pack("<III", c, hj, wj))
    for fm in record.scales:
        parts.append(np.ascontiguousarray(fm, dtype="<f4").tobytes())
    if record.pixel_mask is not None:
        parts.append(record.pixel_mask.astype(np.uint8).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Cursor:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise ParseError(f"truncated file: need {n} bytes for {what}", self.off)
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def read_feature_file(path):
    with open(path, "rb") as f:
        buf = f.read()
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = cur.unpack("I", "version")
    if version != VERSION:
        raise ParseError(f"unsupported format version {version}", cur.off - 4)

    def read_str(what):
        (n,) = cur.unpack("H", f"{what} length")
        return cur.take(n, what).decode("utf-8")

    image_id = read_str("image_id")
    class_label = read_str("class_label")
    flags, h, w = cur.unpack("BII", "flags/image size")
    is_anomalous = bool(flags & 1)
    has_mask = bool(flags & 2)
    if h == 0 or w == 0 or h > 1 << 20 or w > 1 << 20:
        raise ParseError(f"unreasonable image extents {h}x{w}", cur.off - 8)
    (n_scales,) = cur.unpack("B", "scale count")
    if n_scales == 0:
        raise ParseError("zero feature scales", cur.off - 1)
    dims = []
    for j in range(n_scales):
        start = cur.off
        c, hj, wj = cur.unpack("III", f"scale {j} dims")
        count = int(c) * int(hj) * int(wj)
        if min(c, hj, wj) == 0 or count > (1 << 31):
            raise ParseError(f"scale {j} extent overflow: {c}x{hj}x{wj}", start)
        dims.append((c, hj, wj))
    scales = []
    for j, (c, hj, wj) in enumerate(dims):
        nbytes = c * hj * wj * 4
        raw = cur.take(nbytes, f"scale {j} data")
        scales.append(np.frombuffer(raw, dtype="<f4").reshape(c, hj, wj).copy())
    pixel_mask = None
    if has_mask:
        raw = cur.take(h * w, "pixel mask")
        pixel_mask = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
        if pixel_mask.max(initial=0) > 1:
            raise ParseError("mask byte outside {0,1}", cur.off - h * w)
    if cur.off != len(buf):
        raise ParseError(f"{len(buf) - cur.off} trailing bytes", cur.off)
    return FeatureRecord(image_id=image_id, class_label=class_label,
                         is_anomalous=is_anomalous, image_hw=(h, w),
                         scales=scales, pixel_mask=pixel_mask)


# ---------------------------------------------------------------------------
# dataset directory = feature files + manifest

MANIFEST_NAME = "manifest.txt"


def write_manifest(entries, path):
    """entries: iterable of (relative_path, split)."""
    with open(path, "w", encoding="utf-8") as f:
        for rel, split in entries:
            if split not in SPLITS:
                raise DataError(f"unknown split {split!r} for {rel}")
            f.write(f"{rel}\t{split}\n")


def read_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                rel, split = line.split("\t")
            except ValueError:
                raise DataError(f"{path}:{ln}: expected 'path<TAB>split'") from None
            if split not in SPLITS:
                raise DataError(f"{path}:{ln}: unknown split {split!r}")
            entries.append((rel, split))
    return entries


def save_dataset(train_records, test_records, root):
    """Write records under root/features/ and the manifest at root/manifest.txt."""
    feat_dir = os.path.join(root, "features")
    os.makedirs(feat_dir, exist_ok=True)
    entries = []
    for split, records in (("train", train_records), ("test", test_records)):
        for rec in records:
            rel = os.path.join("features", f"{rec.image_id}.rlrf")
            write_feature_file(rec, os.path.join(root, rel))
            entries.append((rel, split))
    write_manifest(entries, os.path.join(root, MANIFEST_NAME))


def load_dataset(root):
    """Read the manifest and all records. Returns (train, test) lists."""
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DataError(f"no manifest at {manifest}")
    train, test = [], []
    for rel, split in read_manifest(manifest):
        full = os.path.join(root, rel)
        if not os.path.exists(full):
            raise DataError(f"manifest entry missing on disk: {full}")
        rec = read_feature_file(full)
        (train if split == "train" else test).append(rec)
    _check_consistent_dims(train + test)
    return train, test


def _check_consistent_dims(records):
    if not records:
        return
    dims = records[0].scale_dims()
    hw = records[0].image_hw
    for rec in records[1:]:
        if rec.scale_dims() != dims or rec.image_hw != hw:
            raise DataError(f"record {rec.image_id} has dims {rec.scale_dims()} "
                            f"(image {rec.image_hw}), dataset expects {dims} ({hw})")
