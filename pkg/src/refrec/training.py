"""Loss, Adam optimization, and the training loop."""

from dataclasses import dataclass, field

import numpy as np

from . import features
from .autodiff import (
    Tensor,
    add,
    add_const,
    as_tensor,
    backward,
    div,
    div_const,
    maximum_const,
    mul,
    reshape,
    scale,
    sqrt,
    sub,
    sum_all,
    sum_axis,
    transpose,
)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .rng import derive_key, stream

# squared-norm floor, equal to the spec'd max(norm, 1e-8) guard on each factor
_COS_GUARD_SQ = 1e-16


def _as_tokens(x):
    """Accept (N, C) tokens or (C, H, W) maps; return an (N, C) tensor."""
    t = as_tensor(x)
    if t.ndim == 3:
        c = t.shape[0]
        t = transpose(reshape(t, (c, t.shape[1] * t.shape[2])))
    if t.ndim != 2:
        raise ShapeError(f"expected (N,C) tokens or (C,H,W) map, got {t.shape}")
    return t


def compute_loss(f_rec, f_org, squared=False):
    """Sum over scales of (mean per-position distance + mean cosine distance).

    The distance is the per-position channel-vector L2 norm (or its square
    with `squared`); the cosine denominator is guarded so zero vectors are
    safe and identical inputs give exactly zero loss.
    """
    if len(f_rec) != len(f_org):
        raise ShapeError(f"{len(f_rec)} reconstructed scales vs {len(f_org)} originals")
    total = None
    for j, (rec_in, org_in) in enumerate(zip(f_rec, f_org)):
        rec = _as_tokens(rec_in)
        org = _as_tokens(org_in)
        if rec.shape != org.shape:
            raise ShapeError(f"scale {j}: shapes {rec.shape} vs {org.shape}")
        n = rec.shape[0]
        diff = sub(rec, org)
        ssq = sum_axis(mul(diff, diff), 1)
        dist = ssq if squared else sqrt(ssq)
        dist_term = div_const(sum_all(dist), n)
        dots = sum_axis(mul(rec, org), 1)
        denom = sqrt(mul(maximum_const(sum_axis(mul(rec, rec), 1), _COS_GUARD_SQ),
                         maximum_const(sum_axis(mul(org, org), 1), _COS_GUARD_SQ)))
        cos_term = add_const(scale(div_const(sum_all(div(dots, denom)), n), -1.0), 1.0)
        term = add(dist_term, cos_term)
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def ensure(self, params):
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over a name->Tensor dict; a missing
    gradient counts as zero (moments still decay)."""
    state.ensure(params)
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    squared_distance: bool = False
    checkpoint_interval: int = 0  # epochs between snapshots; 0 = final only
    perturbation: features.PerturbationSpec = field(
        default_factory=features.PerturbationSpec)

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class FitResult:
    loss_history: list
    sigma: float
    adam: AdamState
    epochs_run: int


def prepare_inputs(records, config):
    """Aggregate every record once; returns per-record per-scale token lists."""
    windows = [s.agg_window for s in config.scales]
    prepared = []
    for rec in records:
        maps = features.aggregate_record(rec, windows)
        prepared.append([features.tokens_from_map(fm) for fm in maps])
    return prepared


def fit(train_records, model, bank, tconfig, start_epoch=0, adam=None,
        epoch_callback=None):
    """Train model + reference bank on normal records.

    Deterministic under (seed, config): the shuffle order and the noise of
    epoch e depend only on (seed, e, record index), so resuming from a
    checkpoint at any epoch boundary replays the uninterrupted run bitwise.
    `epoch_callback(epoch, mean_loss, adam)` runs after every epoch.
    """
    tconfig.validate()
    bad = [r.image_id for r in train_records if r.is_anomalous]
    if bad:
        raise DataError(f"training split must contain only normal records; "
                        f"anomalous: {bad[:5]}")
    if not train_records:
        raise DataError("empty training split")

    inputs = prepare_inputs(train_records, model.config)
    orgs = [[Tensor(tok) for tok in rec] for rec in inputs]
    sigma = features.resolve_sigma(
        tconfig.perturbation,
        [[tok.T.reshape(-1) for tok in rec] for rec in inputs])

    params = {**model.params, **bank.parameters()}
    adam = adam or AdamState()
    seed = tconfig.seed
    n = len(train_records)
    history = []
    for epoch in range(start_epoch, tconfig.epochs):
        perm = stream(seed, "shuffle", epoch).permutation(n)
        running = 0.0
        for lo in range(0, n, tconfig.batch_size):
            batch = perm[lo:lo + tconfig.batch_size]
            batch_loss = None
            for idx in batch:
                idx = int(idx)
                tokens = [
                    features.perturb(tok, tconfig.perturbation,
                                     derive_key(seed, "perturb", epoch, idx, j),
                                     sigma=sigma)
                    for j, tok in enumerate(inputs[idx])
                ]
                outs = model.forward(tokens, bank)
                loss = compute_loss(outs, orgs[idx], squared=tconfig.squared_distance)
                batch_loss = loss if batch_loss is None else add(batch_loss, loss)
            batch_loss = div_const(batch_loss, len(batch))
            value = batch_loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch}, batch "
                    f"starting {lo} (records {batch.tolist()})")
            backward(batch_loss)
            adam_step(params, adam, tconfig.learning_rate,
                      tconfig.beta1, tconfig.beta2, tconfig.adam_eps)
            for p in params.values():
                p.zero_grad()
            running += value * len(batch)
        mean_loss = running / n
        history.append(mean_loss)
        if epoch_callback is not None:
            epoch_callback(epoch, mean_loss, adam)
    return FitResult(loss_history=history, sigma=sigma, adam=adam,
                     epochs_run=tconfig.epochs - start_epoch)
