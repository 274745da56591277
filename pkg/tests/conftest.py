"""Shared helpers: finite-difference oracles and tiny model factories."""

from __future__ import annotations

import numpy as np
import pytest

from ham import autodiff as ad


def central_diff(f, arr, eps=1e-6):
    """Central finite differences of scalar-valued f() wrt entries of arr.

    `f` must rebuild its computation from `arr` on every call; the array is
    perturbed in place and restored.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = arr[idx]
        arr[idx] = saved + eps
        up = f()
        arr[idx] = saved - eps
        down = f()
        arr[idx] = saved
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def rel_error(analytic, numeric) -> float:
    """Max absolute difference scaled by the gradient magnitude, floored at 1."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    return float(np.max(np.abs(analytic - numeric))) / scale


def store_grad_check(store, f, eps=1e-6, names=None):
    """Compare store gradients of scalar graph builder f against differences.

    Returns {parameter name: relative error}.  f() must return a scalar
    Tensor and be a deterministic function of the store's current values.
    """
    store.zero_grad()
    out = f()
    ad.backward(out)
    analytic = {name: np.array(p.grad) for name, p in store.items()}

    def value():
        with ad.no_grad():
            return float(f().data)

    errors = {}
    for name, p in store.items():
        if names is not None and name not in names:
            continue
        fd = central_diff(value, p.data, eps=eps)
        errors[name] = rel_error(analytic[name], fd)
    return errors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
