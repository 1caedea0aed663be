"""Finite-difference verification of reverse-mode gradients.

Central differences with h=1e-4 at float64; relative error uses
|a - b| / max(floor, |a| + |b|) so near-zero gradient components do not
produce spurious failures.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def grad_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-4,
    samples_per_block: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Compare reverse-mode adjoints of f() against central differences.

    `f` is a closure over `params` returning a scalar Tensor; it must
    rebuild its graph on every call. When `samples_per_block` is set only
    that many coordinates per parameter block are probed (deterministic
    given `rng`), otherwise every coordinate is checked.

    Returns the maximum relative error across all probed coordinates.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        if samples_per_block is None or samples_per_block >= n:
            coords = np.arange(n)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=samples_per_block, replace=False)
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(f().data)
            flat[c] = orig - h
            down = float(f().data)
            flat[c] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(a_flat[c] - fd) / max(floor, abs(a_flat[c]) + abs(fd))
            if err > worst:
                worst = err
    return worst
