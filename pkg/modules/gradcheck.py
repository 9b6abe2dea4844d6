"""
Central finite-difference gradient checking for tape-differentiated functions.
"""

from typing import Callable, Iterable, Optional

import numpy as np

from modules.tensor import Tape, Tensor

DEFAULT_STEP = 1e-6


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = DEFAULT_STEP,
    indices: Optional[Iterable] = None,
) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to entries of ``tensor``.

    Entries not listed in ``indices`` are left at zero.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        flat[i] = original + step
        upper = loss_fn().item()
        flat[i] = original - step
        lower = loss_fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Norm-relative difference, with a floor so that all-zero gradients compare cleanly."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors,
    step: float = DEFAULT_STEP,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative error between tape gradients and finite differences.

    With ``max_entries`` only that many randomly chosen entries per tensor are
    compared, which keeps whole-network checks fast.
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if max_entries is not None and t.size > max_entries:
            chosen = rng.choice(t.size, size=max_entries, replace=False)
        else:
            chosen = np.arange(t.size)
        numeric = numerical_gradient(loss_fn, t, step, chosen)
        worst = max(
            worst,
            relative_error(analytic.reshape(-1)[chosen], numeric.reshape(-1)[chosen]),
        )
    return worst
