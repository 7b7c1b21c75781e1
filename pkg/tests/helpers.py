"""Shared test utilities."""

import numpy as np

from refrec.autodiff import Tensor, backward, finite_difference_gradient


def rel_err(analytic, numeric):
    """Max elementwise relative error with a 1e-8 floor on the denominator."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(f, arrays, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of scalar f(*tensors) with central
    differences for every input. Arrays are promoted to float64."""
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = f(*tensors)
    backward(out)
    worst = 0.0
    for i, t in enumerate(tensors):
        def partial(z, i=i):
            args = [z if j == i else Tensor(tensors[j].data, dtype=np.float64)
                    for j in range(len(tensors))]
            return f(*args)

        numeric = finite_difference_gradient(partial, t, h=h)
        analytic = t.grad if t.grad is not None else np.zeros_like(numeric)
        worst = max(worst, rel_err(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst
