"""Central finite-difference audit of reverse-mode gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from socialdiff.autodiff import Tape
from socialdiff.params import GradientBundle, ParameterSet
from socialdiff.protocols import LossFunction
from socialdiff.types import GradientAuditPayload
from socialdiff.variant import constant_leaves

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-3
_DAMPING = 1e-8


@dataclass(frozen=True)
class GradientAudit:
    """Largest relative disagreement found, overall and per array."""

    max_error: float
    per_array: dict[str, float]
    samples: int

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_error < tolerance

    def to_payload(
        self, label: str, tolerance: float = DEFAULT_TOLERANCE
    ) -> GradientAuditPayload:
        return GradientAuditPayload(
            label=label,
            max_error=self.max_error,
            samples=self.samples,
            per_array=dict(self.per_array),
            passed=self.passed(tolerance),
        )


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + _DAMPING)


def loss_value(loss_fn: LossFunction, params: ParameterSet) -> float:
    tape = Tape(recording=False, dtype=params.dtype)
    return float(loss_fn(tape, constant_leaves(tape, params)).value)


def analytic_gradients(
    loss_fn: LossFunction, params: ParameterSet
) -> GradientBundle:
    tape = Tape(dtype=params.dtype)
    leaves = tape.watch_parameters(params)
    return tape.backward(loss_fn(tape, leaves), params)


def _sample_positions(
    params: ParameterSet, sample_count: int, rng: np.random.Generator
) -> list[tuple[str, int]]:
    # One position per array, the rest spread over all scalars.
    names = list(params)
    sizes = np.array([params[name].size for name in names], dtype=np.int64)
    positions = [
        (name, int(rng.integers(size)))
        for name, size in zip(names, sizes, strict=True)
        if size
    ]
    extra = min(max(sample_count - len(positions), 0), int(sizes.sum()))
    if extra:
        flat = rng.choice(int(sizes.sum()), size=extra, replace=False)
        bounds = np.cumsum(sizes)
        owners = np.searchsorted(bounds, flat, side="right")
        starts = bounds - sizes
        positions += [
            (names[owner], int(index - starts[owner]))
            for owner, index in zip(owners, flat, strict=True)
        ]
    return positions


def finite_difference_audit(
    loss_fn: LossFunction,
    params: ParameterSet,
    *,
    eps: float = 1e-4,
    sample_count: int = 64,
    seed: int = 0,
) -> GradientAudit:
    """Compare tape gradients with ``(L(t+eps) - L(t-eps)) / 2eps``.

    The audit runs on a 64-bit copy of ``params``. Every array is perturbed
    at least once; the error at one position is
    ``|a - n| / (|a| + |n| + 1e-8)``.
    """
    work = params.astype(np.float64)
    grads = analytic_gradients(loss_fn, work)
    rng = np.random.default_rng(seed)
    per_array: dict[str, float] = {name: 0.0 for name in work}
    positions = _sample_positions(work, sample_count, rng)
    for name, index in positions:
        flat = work[name].reshape(-1)
        original = flat[index]
        flat[index] = original + eps
        upper = loss_value(loss_fn, work)
        flat[index] = original - eps
        lower = loss_value(loss_fn, work)
        flat[index] = original
        numeric = (upper - lower) / (2.0 * eps)
        analytic = float(grads[name].reshape(-1)[index])
        error = relative_error(analytic, numeric)
        per_array[name] = max(per_array[name], error)
        logger.debug(
            "%s[%d]: analytic=%.6g numeric=%.6g error=%.3g",
            name,
            index,
            analytic,
            numeric,
            error,
        )
    max_error = max(per_array.values(), default=0.0)
    logger.info(
        "Gradient audit over %d positions: max relative error %.3g",
        len(positions),
        max_error,
    )
    return GradientAudit(
        max_error=max_error, per_array=per_array, samples=len(positions)
    )
