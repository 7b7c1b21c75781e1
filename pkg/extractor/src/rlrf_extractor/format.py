"""RLRF record writer.

Implements the interchange format contract directly (magic "RLRF",
version 1, little-endian; see the consumer package's documentation); the
extractor talks to the detector only through these files.
"""

import struct

import numpy as np

MAGIC = b"RLRF"
VERSION = 1


def write_record(path, image_id, class_label, is_anomalous, image_hw,
                 scales, pixel_mask=None):
    """scales: list of (C, H_j, W_j) float32 arrays; pixel_mask: (H, W) {0,1}."""
    h, w = image_hw
    if pixel_mask is not None and pixel_mask.shape != (h, w):
        raise ValueError(f"mask {pixel_mask.shape} does not match image {image_hw}")
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for text in (image_id, class_label):
        raw = text.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    flags = (1 if is_anomalous else 0) | (2 if pixel_mask is not None else 0)
    parts.append(struct.pack("<BII", flags, h, w))
    parts.append(struct.pack("<B", len(scales)))
    for fm in scales:
        c, hj, wj = fm.shape
        parts.append(struct.pack("<III", c, hj, wj))
    for fm in scales:
        parts.append(np.ascontiguousarray(fm, dtype="<f4").tobytes())
    if pixel_mask is not None:
        parts.append(pixel_mask.astype(np.uint8).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))
