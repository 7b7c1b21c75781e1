"""The reconstruction network: per-scale stacks of shortcut-free blocks that
rebuild patch tokens from a learnable per-position reference bank.

Two attention mechanisms feed each block. Masked learnable-key attention
(mlka) queries the input against reference keys under a neighbor mask (a
token cannot see itself or its window) and mixes *input* values, so fine
detail survives without any residual path. Local cross attention (lca)
queries the input against reference keys under the complementary local mask
and mixes *reference* values, so its output carries no input content at all.
The block sums them (lca weighted by alpha), normalizes, and applies an FFN
with the usual residual.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .autodiff import (
    Tensor,
    add,
    concat_cols,
    gelu,
    layer_norm,
    linear,
    masked_softmax,
    matmul,
    scale,
    slice_cols,
    transpose,
)
from .errors import ConfigError

# Table-row order for ablation reports
VARIANT_ORDER = ("residual+self", "residual+cross", "cross", "mlka", "lca",
                 "cross+mlka", "mlka+lca")

# variant -> (mechanisms, residual into the attention sum)
_VARIANTS = {
    "residual+self": (("self",), True),
    "residual+cross": (("cross",), True),
    "cross": (("cross",), False),
    "mlka": (("mlka",), False),
    "lca": (("lca",), False),
    "cross+mlka": (("mlka", "cross"), False),
    "mlka+lca": (("mlka", "lca"), False),
}

# mechanism -> (keys from reference?, values from reference?, mask kind)
_MECHS = {
    "self": (False, False, None),
    "cross": (True, True, None),
    "mlka": (True, False, "neighbor"),
    "lca": (True, True, "local"),
}


@dataclass(frozen=True)
class ScaleSpec:
    channels: int      # token feature width at this scale
    height: int
    width: int
    hidden: int        # attention/FFN working width
    window: int        # mask window (both kinds)
    agg_window: int    # neighborhood aggregation window

    @property
    def tokens(self):
        return self.height * self.width


@dataclass(frozen=True)
class ModelConfig:
    scales: tuple
    blocks: int = 4
    alpha: float = 2.0
    heads: int = 1
    variant: str = "mlka+lca"
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))

    def validate(self):
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.alpha < 1.0:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.variant not in _VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"one of {sorted(_VARIANTS)}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32|float64, got {self.dtype}")
        if not self.scales:
            raise ConfigError("at least one scale required")
        for j, s in enumerate(self.scales):
            if min(s.channels, s.height, s.width) < 1 or s.hidden < 2:
                raise ConfigError(f"scale {j}: bad extents {s}")
            if s.window % 2 == 0 or s.window < 1:
                raise ConfigError(f"scale {j}: window must be odd, got {s.window}")
            if not (s.height > s.window or s.width > s.window):
                raise ConfigError(
                    f"scale {j}: window {s.window} covers the whole {s.height}x"
                    f"{s.width} grid in both dimensions (fully masked rows)")
            if s.agg_window % 2 == 0 or s.agg_window > min(s.height, s.width):
                raise ConfigError(f"scale {j}: aggregation window {s.agg_window} "
                                  f"invalid for {s.height}x{s.width}")
            if s.hidden % self.heads:
                raise ConfigError(f"scale {j}: hidden {s.hidden} not divisible "
                                  f"by heads {self.heads}")
        return self

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def canonical_text(self):
        """Stable one-line-per-field form; checkpoints echo this."""
        lines = [
            f"alpha={self.alpha!r}", f"blocks={self.blocks}",
            f"dtype={self.dtype}", f"heads={self.heads}",
            f"seed={self.seed}", f"variant={self.variant}",
        ]
        for j, s in enumerate(self.scales):
            lines.append(
                f"scale.{j}={s.channels},{s.height},{s.width},"
                f"{s.hidden},{s.window},{s.agg_window}")
        return "\n".join(lines) + "\n"


def config_from_canonical(text):
    fields = {}
    scales = {}
    for line in text.strip().splitlines():
        key, val = line.split("=", 1)
        if key.startswith("scale."):
            c, h, w, hid, win, agg = (int(x) for x in val.split(","))
            scales[int(key.split(".")[1])] = ScaleSpec(c, h, w, hid, win, agg)
        else:
            fields[key] = val
    return ModelConfig(
        scales=tuple(scales[i] for i in sorted(scales)),
        blocks=int(fields["blocks"]), alpha=float(fields["alpha"]),
        heads=int(fields["heads"]), variant=fields["variant"],
        dtype=fields["dtype"], seed=int(fields["seed"])).validate()


# ---------------------------------------------------------------------------
# masks

class AttentionMask:
    """Additive block mask over token pairs; `blocked[i, q]` marks -inf."""

    __slots__ = ("kind", "blocked", "height", "width", "window")

    def __init__(self, kind, blocked, height, width, window):
        self.kind = kind
        self.blocked = blocked
        self.height = height
        self.width = width
        self.window = window


def build_mask(kind, height, width, window):
    """neighbor: a token's own window is blocked; local: only the window is
    visible. Windows clip at the grid boundary."""
    if kind not in ("neighbor", "local"):
        raise ConfigError(f"mask kind must be neighbor|local, got {kind!r}")
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"mask window must be odd and positive, got {window}")
    if not (height > window or width > window):
        raise ConfigError(f"window {window} covers the whole {height}x{width} "
                          "grid in both dimensions (fully masked rows)")
    n = height * width
    hh = np.arange(n) // width
    ww = np.arange(n) % width
    r = window // 2
    within = (np.abs(hh[:, None] - hh[None, :]) <= r) \
        & (np.abs(ww[:, None] - ww[None, :]) <= r)
    blocked = within if kind == "neighbor" else ~within
    return AttentionMask(kind, blocked, height, width, window)


# ---------------------------------------------------------------------------
# parameters

def _init_weight(seed, name, shape, fan_in, dtype):
    std = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.stream(seed, "model", name).normal(shape, std=std, dtype=dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _make_ffn(seed, prefix, c_in, c_out, hidden, dtype, params):
    p = {
        "w1": _init_weight(seed, f"{prefix}.w1", (hidden, c_in), c_in, dtype),
        "b1": _zeros((hidden,), dtype),
        "w2": _init_weight(seed, f"{prefix}.w2", (c_out, hidden), hidden, dtype),
        "b2": _zeros((c_out,), dtype),
    }
    for k, v in p.items():
        params[f"{prefix}.{k}"] = v
    return p


def _make_proj(seed, prefix, width, dtype, params):
    p = {k: _init_weight(seed, f"{prefix}.{k}", (width, width), width, dtype)
         for k in ("wq", "wk", "wv")}
    for k, v in p.items():
        params[f"{prefix}.{k}"] = v
    return p


def _make_ln(prefix, width, dtype, params):
    p = {"gain": _ones((width,), dtype), "bias": _zeros((width,), dtype)}
    for k, v in p.items():
        params[f"{prefix}.{k}"] = v
    return p


class ReferenceBank:
    """Learnable per-position reference tokens and their hidden projections."""

    def __init__(self, tokens, proj_w, proj_b):
        self.tokens = tokens
        self.proj_w = proj_w
        self.proj_b = proj_b

    def projected(self, j):
        """Reference tokens in hidden space; recomputed from the live
        parameters on every call so training sees fresh values."""
        return linear(self.tokens[j], self.proj_w[j], self.proj_b[j])

    def parameters(self):
        out = {}
        for j in range(len(self.tokens)):
            out[f"ref.{j}.tokens"] = self.tokens[j]
            out[f"ref.{j}.proj_w"] = self.proj_w[j]
            out[f"ref.{j}.proj_b"] = self.proj_b[j]
        return out


def init_reference(config, seed=None):
    """Reference bank with R ~ N(0, (1/sqrt(C))^2) and a fresh projection."""
    config.validate()
    seed = config.seed if seed is None else seed
    dtype = config.np_dtype()
    tokens, proj_w, proj_b = [], [], []
    for j, s in enumerate(config.scales):
        tokens.append(Tensor(
            rng.stream(seed, "ref", j, "tokens").normal(
                (s.tokens, s.channels), std=1.0 / math.sqrt(s.channels), dtype=dtype),
            requires_grad=True))
        proj_w.append(_init_weight(seed, f"ref.{j}.proj_w",
                                   (s.hidden, s.channels), s.channels, dtype))
        proj_b.append(_zeros((s.hidden,), dtype))
    return ReferenceBank(tokens, proj_w, proj_b)


class ReconstructionModel:
    """Per-scale token reconstructor; parameters live in `self.params`."""

    def __init__(self, config, params, scales, masks):
        self.config = config
        self.params = params      # flat name -> Tensor
        self.scales = scales      # per scale: ffn_in, blocks, ffn_out
        self.masks = masks        # per scale: kind -> AttentionMask

    @property
    def mechanisms(self):
        return _VARIANTS[self.config.variant][0]

    @property
    def residual(self):
        return _VARIANTS[self.config.variant][1]

    def forward(self, tokens_list, bank):
        return model_forward(self, bank, tokens_list)


def init_model(config, seed=None):
    config.validate()
    seed = config.seed if seed is None else seed
    dtype = config.np_dtype()
    mechs, _ = _VARIANTS[config.variant]
    params = {}
    scales = []
    masks = []
    for j, s in enumerate(config.scales):
        hid = 4 * s.hidden
        sc = {
            "ffn_in": _make_ffn(seed, f"scale{j}.ffn_in", s.channels, s.hidden,
                                hid, dtype, params),
            "ffn_out": _make_ffn(seed, f"scale{j}.ffn_out", s.hidden, s.channels,
                                 hid, dtype, params),
            "blocks": [],
        }
        for k in range(config.blocks):
            prefix = f"scale{j}.block{k}"
            blk = {
                "ln1": _make_ln(f"{prefix}.ln1", s.hidden, dtype, params),
                "ln2": _make_ln(f"{prefix}.ln2", s.hidden, dtype, params),
                "ffn": _make_ffn(seed, f"{prefix}.ffn", s.hidden, s.hidden,
                                 hid, dtype, params),
            }
            for mech in mechs:
                blk[mech] = _make_proj(seed, f"{prefix}.{mech}", s.hidden,
                                       dtype, params)
            sc["blocks"].append(blk)
        scales.append(sc)
        need = {_MECHS[m][2] for m in mechs} - {None}
        masks.append({kind: build_mask(kind, s.height, s.width, s.window)
                      for kind in need})
    return ReconstructionModel(config, params, scales, masks)


def ablation_variant(config, variant):
    """Same architecture/seed with the block structure of `variant`."""
    if variant not in _VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; one of {sorted(_VARIANTS)}")
    return init_model(replace(config, variant=variant))


# ---------------------------------------------------------------------------
# forward pieces

def ffn_forward(x, p):
    return linear(gelu(linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def attention_forward(kind, y, r_h, proj, mask, heads=1):
    """Scaled dot-product attention with per-mechanism key/value sources."""
    ref_keys, ref_values, mask_kind = _MECHS[kind]
    if (mask_kind is None) != (mask is None):
        raise ConfigError(f"{kind} attention requires "
                          f"{'no mask' if mask_kind is None else mask_kind + ' mask'}")
    if mask is not None and mask.kind != mask_kind:
        raise ConfigError(f"{kind} attention needs a {mask_kind} mask, "
                          f"got {mask.kind}")
    q = linear(y, proj["wq"])
    k = linear(r_h if ref_keys else y, proj["wk"])
    v = linear(r_h if ref_values else y, proj["wv"])
    width = q.shape[1]
    dk = width // heads
    inv = 1.0 / math.sqrt(dk)
    if heads == 1:
        weights = masked_softmax(scale(matmul(q, transpose(k)), inv), mask)
        return matmul(weights, v)
    outs = []
    for h in range(heads):
        lo, hi = h * dk, (h + 1) * dk
        qh, kh, vh = (slice_cols(t, lo, hi) for t in (q, k, v))
        weights = masked_softmax(scale(matmul(qh, transpose(kh)), inv), mask)
        outs.append(matmul(weights, vh))
    return concat_cols(outs)


def mlka_forward(y, r_h, proj, mask, heads=1):
    """Neighbor-masked attention: reference keys, input values, no residual."""
    return attention_forward("mlka", y, r_h, proj, mask, heads)


def lca_forward(y, r_h, proj, mask, heads=1):
    """Local cross attention: reference keys *and* values; the output lies in
    the row space of the projected reference, with no input content path."""
    return attention_forward("lca", y, r_h, proj, mask, heads)


def attention_combine(y, r_h, blk, masks, alpha, mechs, residual, heads=1):
    """The pre-FFN block state: LN over the mechanism sum (alpha on the
    reference-value mechanism when two combine), with no input shortcut
    unless `residual`."""
    parts = []
    for i, mech in enumerate(mechs):
        mask = masks.get(_MECHS[mech][2]) if _MECHS[mech][2] else None
        out = attention_forward(mech, y, r_h, blk[mech], mask, heads)
        if len(mechs) == 2 and i == 1:
            out = scale(out, alpha)
        parts.append(out)
    total = parts[0]
    for extra in parts[1:]:
        total = add(total, extra)
    if residual:
        total = add(total, y)
    return layer_norm(total, blk["ln1"]["gain"], blk["ln1"]["bias"])


def block_forward(y, r_h, blk, masks, alpha, mechs=("mlka", "lca"),
                  residual=False, heads=1):
    z = attention_combine(y, r_h, blk, masks, alpha, mechs, residual, heads)
    return layer_norm(add(ffn_forward(z, blk["ffn"]), z),
                      blk["ln2"]["gain"], blk["ln2"]["bias"])


def model_forward(model, bank, tokens_list):
    """Reconstruct every scale's token matrix. Inputs are (N_j, C_j) arrays
    or Tensors; returns per-scale (N_j, C_j) Tensors."""
    cfg = model.config
    if len(tokens_list) != len(cfg.scales):
        raise ConfigError(f"{len(tokens_list)} token matrices for "
                          f"{len(cfg.scales)} scales")
    mechs, residual = _VARIANTS[cfg.variant]
    outs = []
    for j, s in enumerate(cfg.scales):
        x = tokens_list[j] if isinstance(tokens_list[j], Tensor) else Tensor(tokens_list[j])
        if x.shape != (s.tokens, s.channels):
            raise ConfigError(f"scale {j}: tokens {x.shape} do not match "
                              f"({s.tokens}, {s.channels})")
        sc = model.scales[j]
        r_h = bank.projected(j)
        y = ffn_forward(x, sc["ffn_in"])
        for blk in sc["blocks"]:
            y = block_forward(y, r_h, blk, model.masks[j], cfg.alpha,
                              mechs, residual, cfg.heads)
        outs.append(ffn_forward(y, sc["ffn_out"]))
    return outs
