"""Finite-difference oracles for testing code built on :mod:`ivret.numkit`."""
from __future__ import absolute_import, division, print_function, with_statement

import numpy as np

import ivret.numkit


def numerical_grad(loss_fn, tensor, h=1e-5):
    """central differences of the scalar ``loss_fn()`` wrt ``tensor.data``"""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn().item()
        flat[i] = orig - h
        minus = loss_fn().item()
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom


def gradient_pairs(loss_fn, params, h=1e-5):
    """backprop and central-difference gradients of every tensor in ``params``

    ``loss_fn`` must be deterministic (draw its noise from a freshly seeded
    :class:`ivret.numkit.Rng` on every call).

    :return dict: parameter name (or index) -> ``(analytic, numeric)``
    """
    named = ivret.numkit._named(params)
    ivret.numkit.zero_grad([p for _, p in named])
    ivret.numkit.backward(loss_fn())
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named}
    ivret.numkit.zero_grad([p for _, p in named])
    return {name: (analytic[name], numerical_grad(loss_fn, p, h)) for name, p in named}


def check_gradients(loss_fn, params, h=1e-5):
    """relative error of backprop against central differences per tensor

    :return dict: parameter name (or index) -> relative error
    """
    return {name: relative_error(a, n)
            for name, (a, n) in gradient_pairs(loss_fn, params, h).items()}


def assert_gradients(loss_fn, params, rtol=1e-4, atol=1e-6, h=1e-6):
    """elementwise comparison; ``atol`` covers entries whose true gradient is 0"""
    for name, (analytic, numeric) in gradient_pairs(loss_fn, params, h).items():
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol,
                                   err_msg='gradient of {}'.format(name))
