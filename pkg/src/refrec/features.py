"""Model-input preparation: token layout, neighborhood aggregation, noise."""

from dataclasses import dataclass

import numpy as np

from . import backend, rng
from .errors import ConfigError

SIGMA_STD_FACTOR = 0.1  # auto sigma = factor * global feature std


def tokens_from_map(fm):
    """(C, H, W) feature map -> (N, C) token matrix, position n = h*W + w."""
    c = fm.shape[0]
    return np.ascontiguousarray(fm.reshape(c, -1).T)


def map_from_tokens(tokens, hw):
    """(N, C) tokens -> (C, H, W) feature map."""
    h, w = hw
    return np.ascontiguousarray(tokens.T.reshape(tokens.shape[1], h, w))


def neighborhood_aggregate(fm, p):
    """Replace every position by the channel-wise mean of its p x p window,
    clipped at the borders (adaptive-average-pooling boundary behaviour)."""
    if p % 2 == 0:
        raise ConfigError(f"aggregation window must be odd, got {p}")
    _, h, w = fm.shape
    if p > h or p > w:
        raise ConfigError(f"aggregation window {p} exceeds map extents {h}x{w}")
    if p == 1:
        return fm.copy()
    return backend.box_mean_2d(np.ascontiguousarray(fm), p)


def aggregate_record(record, windows):
    """Aggregated (C, H, W) maps for every scale of a record."""
    if len(windows) != len(record.scales):
        raise ConfigError(f"{len(windows)} aggregation windows for "
                          f"{len(record.scales)} scales")
    return [neighborhood_aggregate(fm, p) for fm, p in zip(record.scales, windows)]


@dataclass
class PerturbationSpec:
    enabled: bool = True
    sigma: float | None = None  # None: resolve to SIGMA_STD_FACTOR * global std

    def __post_init__(self):
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.enabled and self.sigma is not None and self.sigma == 0:
            raise ConfigError("enabled perturbation requires sigma > 0")


def resolve_sigma(spec, train_features):
    """Fill in the auto sigma from the std of all training-feature values."""
    if not spec.enabled:
        return 0.0
    if spec.sigma is not None:
        return spec.sigma
    total = 0
    acc = 0.0
    acc2 = 0.0
    for maps in train_features:
        for fm in maps:
            acc += float(fm.sum(dtype=np.float64))
            acc2 += float(np.square(fm, dtype=np.float64).sum())
            total += fm.size
    mean = acc / total
    var = max(acc2 / total - mean * mean, 0.0)
    return SIGMA_STD_FACTOR * float(np.sqrt(var))


def perturb(tokens, spec, rng_seed, sigma=None):
    """Add seeded elementwise Gaussian noise to a token matrix (training only).

    `sigma` overrides the spec value when the auto sigma was resolved upstream.
    """
    if not spec.enabled:
        return tokens
    std = spec.sigma if sigma is None else sigma
    if std is None:
        raise ConfigError("auto sigma not resolved; call resolve_sigma first")
    if std == 0.0:
        return tokens
    noise = rng.Stream(rng_seed).normal(tokens.shape, std=std, dtype=tokens.dtype)
    return tokens + noise
