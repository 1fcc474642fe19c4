"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, float64_mode


@dataclass
class GradCheckReport:
    max_rel_error: float
    param: str | None
    index: tuple | None
    checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def gradient_check(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
                   epsilon: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` maps a dict of named tensors to a rank-0 tensor. It is evaluated once
    on tracked float64 inputs for the analytic gradient and twice per element
    on untracked inputs for the numeric one, so any randomness inside ``f``
    must be re-seeded on every call.
    """
    with float64_mode():
        base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        tape = Tape()
        loss = f({k: tape.watch(v, k) for k, v in base.items()})
        analytic = tape.backward(loss)

        def value(vals):
            return float(f({k: Tensor(v) for k, v in vals.items()}).data)

        worst, where, checked = 0.0, (None, None), 0
        for name, arr in base.items():
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + epsilon
                up = value(base)
                arr[idx] = orig - epsilon
                down = value(base)
                arr[idx] = orig
                numeric = (up - down) / (2 * epsilon)
                err = float(relative_error(analytic[name][idx], numeric))
                checked += 1
                if err > worst or where[0] is None:
                    worst, where = max(err, worst), (name, idx)
    return GradCheckReport(worst, where[0], where[1], checked)
