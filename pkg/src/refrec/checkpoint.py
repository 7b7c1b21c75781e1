"""Versioned binary checkpoints: parameters, Adam moments, epoch, rng state.

Layout (little-endian): magic "RLRC" | version u32 | config echo u32+utf8
(canonical model-config text) | tensor count u32 | per tensor: name u16+utf8,
rank u8, extents u32 each, float32 data | moment tensors in the same scheme
(names prefixed "m:" / "v:") | epoch u32 | rng state (64 bytes: adam step,
training seed, zero padding).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ParseError
from .rlrf import _Cursor
from .training import AdamState

MAGIC = b"RLRC"
VERSION = 1
_RNG_STATE_BYTES = 64


@dataclass
class CheckpointState:
    config_text: str
    params: dict          # name -> float32 ndarray
    moments_m: dict
    moments_v: dict
    epoch: int            # epochs completed
    adam_t: int
    seed: int


def _pack_tensors(tensors):
    parts = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name]
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoints store float32 tensors; "
                                  f"{name} is {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return parts


def _read_tensors(cur):
    (count,) = cur.unpack("I", "tensor count")
    out = {}
    for _ in range(count):
        (nlen,) = cur.unpack("H", "tensor name length")
        name = cur.take(nlen, "tensor name").decode("utf-8")
        (rank,) = cur.unpack("B", f"{name} rank")
        shape = cur.unpack(f"{rank}I", f"{name} extents")
        total = int(np.prod(shape)) if shape else 1
        if total > (1 << 31):
            raise ParseError(f"tensor {name} extent overflow {shape}", cur.off)
        raw = cur.take(total * 4, f"{name} data")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return out


def save_checkpoint(state, path):
    echo = state.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(echo)), echo]
    parts += _pack_tensors(state.params)
    moments = {f"m:{k}": v for k, v in state.moments_m.items()}
    moments.update({f"v:{k}": v for k, v in state.moments_v.items()})
    parts += _pack_tensors(moments)
    parts.append(struct.pack("<I", state.epoch))
    rng_state = struct.pack("<QQ", state.adam_t, state.seed)
    parts.append(rng_state + b"\x00" * (_RNG_STATE_BYTES - len(rng_state)))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"bad checkpoint magic {magic!r}", 0)
    (version,) = cur.unpack("I", "version")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", cur.off - 4)
    (clen,) = cur.unpack("I", "config echo length")
    config_text = cur.take(clen, "config echo").decode("utf-8")
    params = _read_tensors(cur)
    moments = _read_tensors(cur)
    (epoch,) = cur.unpack("I", "epoch")
    rng_raw = cur.take(_RNG_STATE_BYTES, "rng state")
    adam_t, seed = struct.unpack("<QQ", rng_raw[:16])
    if cur.off != len(buf):
        raise ParseError(f"{len(buf) - cur.off} trailing bytes", cur.off)
    m = {k[2:]: v for k, v in moments.items() if k.startswith("m:")}
    v = {k[2:]: v for k, v in moments.items() if k.startswith("v:")}
    return CheckpointState(config_text=config_text, params=params,
                           moments_m=m, moments_v=v, epoch=int(epoch),
                           adam_t=int(adam_t), seed=int(seed))


def snapshot(model, bank, epoch, adam, seed):
    """CheckpointState from live training objects."""
    params = {**model.params, **bank.parameters()}
    return CheckpointState(
        config_text=model.config.canonical_text(),
        params={k: v.data.copy() for k, v in params.items()},
        moments_m={k: v.copy() for k, v in adam.m.items()},
        moments_v={k: v.copy() for k, v in adam.v.items()},
        epoch=epoch, adam_t=adam.t, seed=seed)


def restore(state, model, bank):
    """Load a checkpoint into freshly built model/bank; returns AdamState.

    The model must have been built from the same config the checkpoint was
    trained with (echo compared byte for byte).
    """
    expected = model.config.canonical_text()
    if state.config_text != expected:
        raise CheckpointError(
            "checkpoint config echo does not match the active config:\n"
            f"--- checkpoint ---\n{state.config_text}\n--- active ---\n{expected}")
    live = {**model.params, **bank.parameters()}
    if set(live) != set(state.params):
        missing = set(live) ^ set(state.params)
        raise CheckpointError(f"parameter name mismatch: {sorted(missing)[:6]}")
    for name, tensor in live.items():
        arr = state.params[name]
        if arr.shape != tensor.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} vs "
                                  f"model {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype).copy()
        tensor.zero_grad()
    adam = AdamState(t=state.adam_t)
    adam.m = {k: v.copy() for k, v in state.moments_m.items()}
    adam.v = {k: v.copy() for k, v in state.moments_v.items()}
    return adam
