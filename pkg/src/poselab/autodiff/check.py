from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, param_index: int, entry: int):
        super().__init__(message)
        self.param_index = param_index
        self.entry = entry


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6) -> float:
    """Compare tape gradients with central differences.

    ``fn`` is re-evaluated with each parameter entry nudged by +/- ``step``
    and must read the parameters' ``data`` in place. Returns the maximum over
    all entries of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = fn()
        backward(out, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        if not np.all(np.isfinite(flat)):
            bad = int(np.flatnonzero(~np.isfinite(flat))[0])
            raise NonFiniteError(f"parameter {pi} entry {bad} is not finite", pi, bad)
        ga = analytic[pi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = fn().item()
            flat[j] = orig - step
            f_minus = fn().item()
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"non-finite function value perturbing parameter {pi} entry {j}", pi, j)
            numeric = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(ga[j]):
                raise NonFiniteError(f"non-finite analytic gradient at parameter {pi} entry {j}", pi, j)
            err = abs(ga[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
