"""Central finite-difference checks for the autodiff engine."""

import numpy as np

from .tensor import no_grad

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-4


def numerical_grad(fn, tensor, h=DEFAULT_STEP, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. ``tensor.data`` (perturbed in place)."""
    flat = tensor.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * h)
    return out.reshape(tensor.shape)


def relative_error(analytic, numeric, floor=DEFAULT_FLOOR):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps gradients that are zero up to roundoff from dominating;
    below it the measure degrades to absolute error scaled by ``1/floor``.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn, tensors, h=DEFAULT_STEP, floor=DEFAULT_FLOOR, max_entries=None, rng=None):
    """Compare autodiff gradients of ``fn`` against central differences.

    ``fn`` takes no arguments and returns a scalar Tensor built from
    ``tensors``.  When ``max_entries`` is set, at most that many randomly
    chosen entries per tensor are differenced.  Returns a list of
    ``(index, relative_error)`` in the order of ``tensors``.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    rng = np.random.default_rng(0) if rng is None else rng
    report = []
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        n = numerical_grad(fn, t, h, idx)
        if idx is not None:
            a, n = a.reshape(-1)[idx], n.reshape(-1)[idx]
        report.append((i, relative_error(a, n, floor)))
    return report


def max_relative_error(fn, tensors, **kwargs):
    return max(err for _, err in check_gradients(fn, tensors, **kwargs))
