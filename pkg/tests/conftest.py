"""Shared numeric helpers for the test suite."""

import numpy as np
import pytest


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f with respect to array x.

    Mutates entries of (a copy of) x one at a time; f must recompute its
    value from the array passed in, with everything else held fixed.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Scale-aware distance between two gradient tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-8)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def fd_gradient_sampled(f, x, indices, h=1e-5):
    """Central differences at selected flat indices only (for big tensors)."""
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
