from __future__ import annotations

import numpy as np

from .core import Tensor


def grad_check(f, x: Tensor, h: float = 1e-5, indices=None, floor: float = 1e-8) -> float:
    """Max coordinatewise relative error between backward and central differences.

    ``f`` maps tensors (``x`` among its inputs, by closure) to a scalar
    Tensor.  ``indices`` restricts the check to a subset of flat positions
    of ``x``.  Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not x.requires_grad:
        raise ValueError("grad_check needs a tensor with requires_grad=True")
    x.zero_grad()
    f().backward()
    analytic = x.grad.ravel().copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst
