"""Shared test utilities: central finite differences and error measures."""

import numpy as np

from xcb import tensor as T
from xcb.tensor import Tensor


def rel_err(a: float, b: float, floor: float = 1e-3) -> float:
    """|a-b| scaled by the larger magnitude, floored so near-zero gradients
    compare absolutely."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_grads(loss_fn, tensors, h: float = 1e-5):
    """Central finite differences of loss_fn() w.r.t. each tensor's data.

    loss_fn must rebuild its graph on every call and return a float.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_grad_rel_err(graph_fn, tensors, h: float = 1e-5, floor: float = 1e-3) -> float:
    """graph_fn() must rebuild and return the scalar loss Tensor. Runs
    backward once, then compares every gradient entry against central
    differences; returns the worst relative error."""
    for t in tensors:
        t.grad = None
    loss = graph_fn()
    T.backward(loss)
    fd = finite_diff_grads(lambda: graph_fn().item(), tensors, h=h)
    worst = 0.0
    for t, g_fd in zip(tensors, fd):
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        for a, b in zip(np.asarray(g).reshape(-1), g_fd.reshape(-1)):
            worst = max(worst, rel_err(float(a), float(b), floor))
    return worst


def rand_leaf(rng, *shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)
