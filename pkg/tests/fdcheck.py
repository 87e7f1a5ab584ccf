"""Central finite-difference gradient oracle shared by the test modules.

Kept independent of the autodiff engine's backward pass: it only re-runs
the forward function while nudging raw parameter entries, so it can sit in
judgment over the analytic gradients.
"""

from __future__ import annotations

import numpy as np

from seqrefine.autodiff import Tape, Tensor, backward, zero_grads


def numeric_grad(loss_fn, param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. every entry of ``param``.

    ``loss_fn`` must be deterministic (fixed masks, fixed data) and must read
    ``param.data`` afresh on each call.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn()
        flat[k] = orig - h
        down = loss_fn()
        flat[k] = orig
        grad[k] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def analytic_grad(loss_builder, params: dict) -> dict:
    """Run one taped forward/backward; returns {name: grad array}."""
    zero_grads(params.values())
    with Tape():
        loss = loss_builder()
    backward(loss)
    return {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(loss_builder, params: dict, h: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare analytic vs central-difference grads for every named parameter.

    Returns {name: max relative error}. ``loss_builder`` builds and returns
    the scalar loss Tensor from the current parameter values.
    """

    def loss_value():
        from seqrefine.autodiff import no_grad

        with no_grad():
            return loss_builder().item()

    analytic = analytic_grad(loss_builder, params)
    errors = {}
    for name, p in params.items():
        numeric = numeric_grad(loss_value, p, h=h)
        errors[name] = max_relative_error(analytic[name], numeric, floor=floor)
    return errors
