"""Shared numerical test utilities: finite differences and error measures."""

import numpy as np

from corridor_twin import autodiff as ad

FD_STEP = 1e-6


def finite_difference(f, arrays, eps=FD_STEP):
    """Central finite differences of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for idx, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = f(*arrays)
            flat[i] = keep - eps
            lo = f(*arrays)
            flat[i] = keep
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return np.abs(analytic - numeric).max(initial=0.0) / denom


def check_gradients(build_loss, arrays, eps=FD_STEP, tol=1e-4):
    """Compare tape gradients of build_loss(tensor_list) against central
    finite differences of the same computation run tape-free.

    ``build_loss`` receives a list of Tensors and must return a scalar Tensor.
    Returns the worst relative error across all inputs.
    """
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape():
        loss = build_loss(tensors)
        ad.backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    def f(*arrs):
        ts = [ad.Tensor(a) for a in arrs]
        return float(build_loss(ts).data)

    numeric = finite_difference(f, [a.copy() for a in arrays], eps)
    worst = max(rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: relative error {worst:.3e} > {tol}"
    return worst


def directional_check(loss_of_params, params, rng, eps=FD_STEP, tol=1e-4):
    """Directional-derivative gradient check for whole modules.

    ``loss_of_params`` must evaluate the scalar loss from the current data
    of ``params`` (a list of Tensors).  The analytic gradient is compared
    against a central difference along one random direction.
    """
    with ad.Tape():
        loss = loss_of_params()
        ad.backward(loss)
    dirs = [rng.standard_normal(p.data.shape) for p in params]
    norm = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum((p.grad * d).sum() for p, d in zip(params, dirs))
    for p in params:
        p.grad = None

    saved = [p.data.copy() for p in params]
    for p, d in zip(params, dirs):
        p.data = p.data + eps * d
    hi = float(loss_of_params().data)
    for p, s, d in zip(params, saved, dirs):
        p.data = s - eps * d
    lo = float(loss_of_params().data)
    for p, s in zip(params, saved):
        p.data = s
    numeric = (hi - lo) / (2 * eps)
    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
    assert err <= tol, f"directional gradient mismatch: {err:.3e} > {tol}"
    return err
