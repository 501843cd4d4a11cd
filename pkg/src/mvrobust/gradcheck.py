"""Central finite-difference checks of reverse-mode gradients.

The numeric side only ever evaluates forward passes (with recording turned
off), so it shares no code with the backward sweep it verifies.

Networks with many ReLUs are only piecewise smooth: a central difference whose
stencil straddles a kink is not an estimate of the derivative at all.  Such
stencils are recognised by disagreeing one-sided slopes (a judgement that
never looks at the analytic gradient) and re-estimated with smaller steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off on near-zero entries from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _maybe_kinked(up: float, mid: float, down: float, h: float, floor: float = 1e-6) -> bool:
    """Forward and backward slopes disagree by more than 1e-4 of the central slope."""
    central = (up - down) / (2 * h)
    return abs(up - 2 * mid + down) / h > 1e-4 * max(abs(central), floor)


def central_difference(at: Callable[[float], float], base: float, eps: float = 1e-5, shrinks: int = 2) -> float:
    """``(at(h) - at(-h)) / 2h`` where ``at(t)`` is the loss at offset t.

    When the one-sided slopes disagree, the estimate is compared with one
    from a tenfold smaller step.  Smooth functions make the two agree to
    O(h^2); a kink inside the wider stencil does not, and then the smaller
    step is adopted (and checked in turn, up to ``shrinks`` times).
    """
    h = eps
    up, down = at(h), at(-h)
    estimate = (up - down) / (2 * h)
    if not _maybe_kinked(up, base, down, h):
        return estimate
    for _ in range(shrinks):
        h /= 10
        finer = (at(h) - at(-h)) / (2 * h)
        if abs(finer - estimate) <= 1e-5 * max(abs(finer), abs(estimate)) + 1e-9:
            return estimate
        estimate = finer
    return estimate


def numeric_partial(f: Callable[[], float], array: np.ndarray, index: tuple, eps: float = 1e-5, base: float | None = None) -> float:
    orig = array[index]

    def at(t: float) -> float:
        array[index] = orig + t
        try:
            return f()
        finally:
            array[index] = orig

    return central_difference(at, f() if base is None else base, eps)


@dataclass
class GradCheckReport:
    entries: list[tuple[str, tuple, float, float, float]] = field(default_factory=list)
    directional: tuple[float, float, float] | None = None

    @property
    def max_error(self) -> float:
        errs = [e[-1] for e in self.entries]
        if self.directional is not None:
            errs.append(self.directional[-1])
        return max(errs, default=0.0)

    def worst(self) -> tuple | None:
        return max(self.entries, key=lambda e: e[-1], default=None)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    rng: np.random.Generator,
    entries_per_param: int | None = 3,
    eps: float = 1e-5,
    directional: bool = True,
) -> GradCheckReport:
    """Compare autodiff gradients of ``loss_fn()`` with central differences.

    Checks ``entries_per_param`` randomly chosen coordinates of every
    parameter (all of them when ``None``) plus, optionally, the directional
    derivative along one random direction spanning all parameters at once.
    """
    grads = backward(loss_fn())

    def value() -> float:
        with no_grad():
            return loss_fn().item()

    base = value()
    report = GradCheckReport()
    for name, p in params:
        g = grads.get(p, np.zeros_like(p.data))
        if entries_per_param is None or p.data.size <= entries_per_param:
            flat = np.arange(p.data.size)
        else:
            flat = rng.choice(p.data.size, size=entries_per_param, replace=False)
        for k in flat:
            idx = np.unravel_index(int(k), p.data.shape)
            num = numeric_partial(value, p.data, idx, eps, base)
            report.entries.append((name, idx, float(g[idx]), num, relative_error(float(g[idx]), num)))

    if directional:
        # unit norm over all parameters so the whole step has length eps
        dirs = [rng.standard_normal(p.data.shape) for _, p in params]
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = float(sum(np.sum(grads.get(p, 0.0) * d) for (_, p), d in zip(params, dirs)))
        originals = [p.data.copy() for _, p in params]

        def at(t: float) -> float:
            for (_, p), d, o in zip(params, dirs, originals):
                p.data = o + t * d
            try:
                return value()
            finally:
                for (_, p), o in zip(params, originals):
                    p.data = o

        num = central_difference(at, base, eps)
        report.directional = (analytic, num, relative_error(analytic, num))
    return report
