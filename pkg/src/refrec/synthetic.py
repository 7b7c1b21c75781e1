"""Synthetic multi-class datasets for desk-scale verification.

Each class owns a fixed low-rank basis per scale and a smooth class-mean
coefficient field; records add a weaker record-specific smooth field plus
iid noise, so every class has a learnable normal pattern with in-class
variation. Anomalous test records overwrite a rectangular region (2-10% of
the image) with another class's content or uniform noise; the rectangle is
shared across scales through normalized coordinates and becomes the pixel
mask at image resolution.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rlrf import FeatureRecord
from .rng import stream

DEFAULT_SCALE_DIMS = ((16, 16, 16), (32, 8, 8))
DEFAULT_IMAGE_HW = (64, 64)

_RANK = 6
_MODES = 3
_MEAN_MODES = 6        # class patterns: richer and faster than record variation
_MEAN_FREQ_HI = 2.5
_RECORD_FIELD_SCALE = 0.25
_ANOM_FIELD_SCALE = 1.75  # donor fields run hotter than any normal pattern
_PIXEL_NOISE_STD = 0.05
_UNIFORM_FILL = 2.0


@dataclass
class AnomalySpec:
    fraction: float = 0.5   # share of test records per class that are anomalous
    area_min: float = 0.02  # patch area band, fraction of image positions
    area_max: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError(f"anomaly fraction must be in (0,1), got {self.fraction}")
        if not 0.0 < self.area_min < self.area_max < 1.0:
            raise ConfigError(f"bad patch area band [{self.area_min}, {self.area_max}]")


class _FieldParams:
    """Random cosine modes per coefficient dimension.

    Amplitudes are normalized by the mode count so the field's overall std
    depends only on `amplitude`. Class mean patterns use more and faster
    modes than the per-record variation: positions then carry genuinely
    different patterns, which per-position reference memory can store but
    shared smoothing weights cannot.
    """

    def __init__(self, s, amplitude=1.0, modes=_MODES, freq_hi=1.25):
        std = 0.6 * amplitude * math.sqrt(3.0 / modes)
        self.modes = modes
        self.amps = s.normal((_RANK, modes), std=std, dtype=np.float64)
        self.freq = (s.uniform(_RANK * modes * 2).reshape(_RANK, modes, 2)
                     * (freq_hi - 0.25) + 0.25)
        self.phase = s.uniform(_RANK * modes).reshape(_RANK, modes) * 2 * np.pi

    def evaluate(self, h, w):
        """Coefficient field (rank, h, w) on the half-pixel-centre unit grid."""
        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        out = np.zeros((_RANK, h, w))
        for t in range(_RANK):
            for q in range(self.modes):
                angle = 2 * np.pi * (self.freq[t, q, 0] * ys[:, None]
                                     + self.freq[t, q, 1] * xs[None, :])
                out[t] += self.amps[t, q] * np.cos(angle + self.phase[t, q])
        return out


def _basis(seed, cls, scale, channels):
    """Class-specific basis with a shared column space.

    Every class mixes the same core directions with its own rotation, so
    class identity is carried by *where* coefficient patterns sit, not by
    which channel subspace is occupied. Patches of one class pasted into
    another then match the host's channel statistics and can only be caught
    by position-aware reconstruction, which is the property under test.
    """
    core = stream(seed, "basis_core", scale).normal(
        (channels, _RANK), std=1.0 / math.sqrt(_RANK), dtype=np.float64)
    raw = stream(seed, "basis_mix", cls, scale).normal(
        (_RANK, _RANK), dtype=np.float64)
    mix, _ = np.linalg.qr(raw)  # orthogonal: distinct but equally scaled
    return core @ mix


def _class_content(seed, cls, rec_key, scale_dims):
    """Per-scale (C,H,W) float64 maps for one record of one class."""
    mean_field = _FieldParams(stream(seed, "classfield", cls),
                              modes=_MEAN_MODES, freq_hi=_MEAN_FREQ_HI)
    rec_field = _FieldParams(stream(seed, "recfield", cls, rec_key),
                             amplitude=_RECORD_FIELD_SCALE)
    maps = []
    for j, (c, h, w) in enumerate(scale_dims):
        coef = mean_field.evaluate(h, w) + rec_field.evaluate(h, w)
        fm = np.einsum("cr,rhw->chw", _basis(seed, cls, j, c), coef)
        fm += stream(seed, "recnoise", cls, rec_key, j).normal(
            (c, h, w), std=_PIXEL_NOISE_STD, dtype=np.float64)
        maps.append(fm)
    return maps


def _pick_rect(s, spec, image_hw):
    """Integer pixel rectangle whose area fraction lies inside the band."""
    h, w = image_hw
    total = h * w
    area = spec.area_min + s.uniform(1)[0] * (spec.area_max - spec.area_min)
    aspect = 0.6 + s.uniform(1)[0] * 1.0
    wp = min(max(round(math.sqrt(area * aspect) * w), 1), w)
    hp = min(max(round(math.sqrt(area / aspect) * h), 1), h)
    for _ in range(4 * (h + w)):
        frac = wp * hp / total
        if frac < spec.area_min:
            if wp <= hp and wp < w:
                wp += 1
            elif hp < h:
                hp += 1
            else:
                break
        elif frac > spec.area_max:
            if wp >= hp and wp > 1:
                wp -= 1
            elif hp > 1:
                hp -= 1
            else:
                break
        else:
            break
    x0 = round(s.uniform(1)[0] * (w - wp))
    y0 = round(s.uniform(1)[0] * (h - hp))
    return y0, x0, hp, wp


def _grid_rect(norm_rect, h, w):
    """Map a normalized rectangle onto a grid, at least one cell."""
    y0n, x0n, y1n, x1n = norm_rect
    y0 = min(int(math.floor(y0n * h)), h - 1)
    x0 = min(int(math.floor(x0n * w)), w - 1)
    y1 = max(int(math.ceil(y1n * h)), y0 + 1)
    x1 = max(int(math.ceil(x1n * w)), x0 + 1)
    return y0, x0, min(y1, h), min(x1, w)


def _inject_anomaly(maps, seed, cls, n_classes, rec_key, spec, image_hw, scale_dims):
    s = stream(seed, "anom", cls, rec_key)
    y0, x0, hp, wp = _pick_rect(s, spec, image_hw)
    h, w = image_hw
    norm_rect = (y0 / h, x0 / w, (y0 + hp) / h, (x0 + wp) / w)
    use_uniform = s.uniform(1)[0] < 0.5
    if use_uniform:
        fill_maps = None
    else:
        # content from another class's basis under a fresh random field: it
        # lives in that class's feature subspace but matches no learned
        # per-position pattern of any class
        donor = (cls + 1 + s.randint(n_classes - 1)) % n_classes
        field = _FieldParams(stream(seed, "anomfield", cls, rec_key),
                             amplitude=_ANOM_FIELD_SCALE,
                             modes=_MEAN_MODES, freq_hi=_MEAN_FREQ_HI)
        fill_maps = [
            np.einsum("cr,rhw->chw", _basis(seed, donor, j, c),
                      field.evaluate(h, w))
            for j, (c, h, w) in enumerate(scale_dims)
        ]
    for j, fm in enumerate(maps):
        c, hj, wj = fm.shape
        gy0, gx0, gy1, gx1 = _grid_rect(norm_rect, hj, wj)
        if use_uniform:
            n = c * (gy1 - gy0) * (gx1 - gx0)
            vals = (stream(seed, "anomuni", cls, rec_key, j).uniform(n) * 2 - 1) * _UNIFORM_FILL
            fm[:, gy0:gy1, gx0:gx1] = vals.reshape(c, gy1 - gy0, gx1 - gx0)
        else:
            fm[:, gy0:gy1, gx0:gx1] = fill_maps[j][:, gy0:gy1, gx0:gx1]
    mask = np.zeros(image_hw, dtype=np.uint8)
    mask[y0:y0 + hp, x0:x0 + wp] = 1
    return mask


def generate_synthetic_dataset(n_classes=3, n_train=20, n_test=12,
                               scale_dims=DEFAULT_SCALE_DIMS,
                               anomaly_spec=None, seed=0,
                               image_hw=DEFAULT_IMAGE_HW):
    """Build (train_records, test_records); counts are per class.

    Train records are all normal; per class, round(fraction * n_test) test
    records (clamped to keep both labels present) carry an injected patch
    anomaly and its pixel mask.
    """
    if n_classes < 2:
        raise ConfigError(f"multi-class setting requires >= 2 classes, got {n_classes}")
    if n_train < 1 or n_test < 2:
        raise ConfigError("need n_train >= 1 and n_test >= 2 per class")
    anomaly_spec = anomaly_spec or AnomalySpec()
    for c, h, w in scale_dims:
        if min(c, h, w) < 1:
            raise ConfigError(f"bad scale dims {(c, h, w)}")
    train, test = [], []
    for cls in range(n_classes):
        label = f"class{cls}"
        for i in range(n_train):
            maps = _class_content(seed, cls, ("train", i), scale_dims)
            train.append(FeatureRecord(
                image_id=f"{label}_train_{i:03d}", class_label=label,
                is_anomalous=False, image_hw=image_hw,
                scales=[m.astype(np.float32) for m in maps]))
        n_anom = min(max(round(anomaly_spec.fraction * n_test), 1), n_test - 1)
        order = stream(seed, "anomsel", cls).permutation(n_test)
        anomalous = set(order[:n_anom].tolist())
        for i in range(n_test):
            maps = _class_content(seed, cls, ("test", i), scale_dims)
            mask = None
            if i in anomalous:
                mask = _inject_anomaly(maps, seed, cls, n_classes, i,
                                       anomaly_spec, image_hw, scale_dims)
            test.append(FeatureRecord(
                image_id=f"{label}_test_{i:03d}", class_label=label,
                is_anomalous=mask is not None, image_hw=image_hw,
                scales=[m.astype(np.float32) for m in maps],
                pixel_mask=mask))
    return train, test
