"""Compare the compiled kernels against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeats 200]

Times each hot kernel on shapes representative of the synthetic profile
(256 tokens x 32 hidden, 64 x 64 score maps) and of the full-scale profile
(4096 tokens x 128 hidden), plus one end-to-end training step.
"""

import argparse
import time

import numpy as np

from refrec import backend
from refrec.backend import numpy_impl


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []

    def case(name, native_fn, numpy_fn, reps=repeats):
        t_np = timeit(numpy_fn, reps)
        if backend.have_native():
            t_nat = timeit(native_fn, reps)
            rows.append((name, t_np * 1e6, t_nat * 1e6, t_np / t_nat))
        else:
            rows.append((name, t_np * 1e6, float("nan"), float("nan")))

    for n, c in ((256, 32), (1024, 64)):
        x = rng.standard_normal((n, n)).astype(np.float32)
        blocked = rng.random((n, n)) < 0.3
        blocked[:, 0] = False
        blocked_u8 = blocked.view(np.uint8)
        case(f"masked_softmax_fwd {n}x{n}",
             lambda x=x, b=blocked_u8: backend._native.masked_softmax_fwd(x, b),
             lambda x=x, b=blocked: numpy_impl.masked_softmax_fwd(x, b))
        p = numpy_impl.masked_softmax_fwd(x, blocked)
        g = rng.standard_normal((n, n)).astype(np.float32)
        case(f"masked_softmax_bwd {n}x{n}",
             lambda p=p, g=g: backend._native.masked_softmax_bwd(p, g),
             lambda p=p, g=g, b=blocked: numpy_impl.masked_softmax_bwd(p, g, b))

        xx = rng.standard_normal((n, c)).astype(np.float32)
        gain = np.ones(c, dtype=np.float32)
        bias = np.zeros(c, dtype=np.float32)
        case(f"layer_norm_fwd {n}x{c}",
             lambda xx=xx, g=gain, b=bias: backend._native.layer_norm_fwd(xx, g, b, 1e-5),
             lambda xx=xx, g=gain, b=bias: numpy_impl.layer_norm_fwd(xx, g, b, 1e-5))
        out, xhat, ivar = numpy_impl.layer_norm_fwd(xx, gain, bias, 1e-5)
        gg = rng.standard_normal((n, c)).astype(np.float32)
        case(f"layer_norm_bwd {n}x{c}",
             lambda gg=gg, xh=xhat, iv=ivar, g=gain: backend._native.layer_norm_bwd(gg, xh, iv, g),
             lambda gg=gg, xh=xhat, iv=ivar, g=gain: numpy_impl.layer_norm_bwd(gg, xh, iv, g))
        case(f"gelu_fwd {n}x{c}",
             lambda xx=xx: backend._native.gelu_fwd(xx),
             lambda xx=xx: numpy_impl.gelu_fwd(xx))

    src = rng.standard_normal((32, 16, 16)).astype(np.float32)
    case("box_mean_2d 32x16x16 p=5",
         lambda s=src: backend._native.box_mean_2d(s, 5),
         lambda s=src: numpy_impl.box_mean_2d(s, 5))
    grid = rng.standard_normal((16, 16)).astype(np.float32)
    case("bilinear 16x16 -> 64x64",
         lambda g=grid: backend._native.bilinear_resize(g, 64, 64),
         lambda g=grid: numpy_impl.bilinear_resize(g, 64, 64))
    return rows


def bench_train_step():
    """One full optimizer step on the synthetic-profile model, per backend
    (this process only exercises the backend chosen at import)."""
    from refrec.config import (build_model_config, build_train_config,
                               synthetic_profile, synthetic_scale_dims)
    from refrec.model import init_model, init_reference
    from refrec.synthetic import generate_synthetic_dataset
    from refrec.training import fit

    cfg = synthetic_profile()
    train, _ = generate_synthetic_dataset(
        n_classes=2, n_train=4, n_test=2,
        scale_dims=synthetic_scale_dims(cfg), seed=0)
    mc = build_model_config(cfg, train[0].scale_dims(), seed=0)
    tc = build_train_config(cfg, seed=0)
    tc.epochs = 2
    model, bank = init_model(mc), init_reference(mc)
    t0 = time.perf_counter()
    fit(train, model, bank, tc)
    steps = 2  # one batch of 8 records per epoch (8 records total)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    print(f"active backend: {backend.active_backend()}")
    rows = bench_kernels(args.repeats)
    print(f"\n{'kernel':<28} {'numpy us':>10} {'native us':>10} {'speedup':>8}")
    print("-" * 60)
    for name, t_np, t_nat, speed in rows:
        nat = f"{t_nat:10.1f}" if np.isfinite(t_nat) else "       n/a"
        spd = f"{speed:8.2f}" if np.isfinite(speed) else "     n/a"
        print(f"{name:<28} {t_np:10.1f} {nat} {spd}")

    step = bench_train_step()
    print(f"\ntrain step ({backend.active_backend()} backend): {step * 1e3:.1f} ms")
    print("run with REFREC_BACKEND=numpy to time the fallback end to end")


if __name__ == "__main__":
    main()
