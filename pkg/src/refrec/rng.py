"""Deterministic counter-based random streams.

Every stochastic draw in the package (parameter init, input noise, synthetic
data, epoch shuffling) goes through SplitMix64 keyed by ``(seed, *tags)``.
A stream's output depends only on its key and the draw index, never on what
other streams did, so runs are bit-reproducible and individual streams can
be replayed in isolation (checkpoint resume relies on this).

Gaussians come from Box-Muller over the SplitMix64 uniforms; the pairing and
interleaving below are part of the format and must not change.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z):
    """SplitMix64 finalizer; `z` is a uint64 scalar or array."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _fnv1a(text):
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


def _flatten(tags):
    for t in tags:
        if isinstance(t, (tuple, list)):
            yield from _flatten(t)
        else:
            yield t


def derive_key(seed, *tags):
    """Fold string/int tags (nested tuples allowed) into a 64-bit stream key.
    Order-sensitive."""
    with np.errstate(over="ignore"):
        k = _mix(np.uint64(int(seed) & _U64_MASK) + _GOLDEN)
        for t in _flatten(tags):
            if isinstance(t, str):
                tv = _fnv1a(t)
            else:
                tv = np.uint64(int(t) & _U64_MASK)
            k = _mix(k + _GOLDEN + tv)
    return int(k)


class Stream:
    """Counter-based u64 stream: raw(i) = mix(key + (i+1) * golden)."""

    def __init__(self, key):
        self.key = np.uint64(int(key) & _U64_MASK)
        self.pos = 0

    def raw(self, n):
        """Next `n` raw 64-bit words."""
        with np.errstate(over="ignore"):
            idx = np.arange(self.pos + 1, self.pos + n + 1, dtype=np.uint64)
            out = _mix(self.key + idx * _GOLDEN)
        self.pos += n
        return out

    def uniform(self, n):
        """n doubles in [0, 1), 53-bit resolution."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def gaussian(self, n):
        """n standard normals via Box-Muller, interleaved (cos, sin) pairs."""
        m = (n + 1) // 2
        # u1 in (0, 1] so log never sees zero
        u1 = (self.raw(m) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * (2.0 ** -53)
        u2 = self.uniform(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:n]

    def normal(self, shape, std=1.0, dtype=np.float32):
        n = int(np.prod(shape)) if shape else 1
        vals = self.gaussian(n) * std
        return vals.reshape(shape).astype(dtype)

    def randint(self, bound):
        """One integer in [0, bound), by rejection-free scaling."""
        return int(self.uniform(1)[0] * bound)

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def stream(seed, *tags):
    """Stream keyed by (seed, *tags)."""
    return Stream(derive_key(seed, *tags))
