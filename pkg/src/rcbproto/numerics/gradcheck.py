"""Central-difference check of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    max_coords_per_tensor: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current ``.data`` of
    ``params`` on every call. When ``max_coords_per_tensor`` is set, that many
    coordinates per tensor are sampled instead of checking all of them.

    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside the useful range for float64")
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        if max_coords_per_tensor is None or flat.size <= max_coords_per_tensor:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords_per_tensor, replace=False)
        a_flat = a.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = loss_fn().item()
            flat[idx] = orig - epsilon
            down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"non-finite finite difference at {p.name}[{idx}]")
            err = abs(a_flat[idx] - numeric) / max(1.0, abs(a_flat[idx]), abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
