"""Monte Carlo estimate container and the errors raised by estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class EstimatorError(RuntimeError):
    """An estimator could not produce a trustworthy value."""


class FieldEvaluationError(EstimatorError):
    """A field returned non-finite values along a path."""

    def __init__(self, what: str, sample: int, step: int):
        super().__init__(f"non-finite {what} at sample {sample}, step {step}")
        self.sample = sample
        self.step = step


class TruncationError(EstimatorError):
    """The time-integral tail bound exceeds the requested tolerance."""


class InvariantViolation(EstimatorError):
    """A runtime bound that must hold for every run was violated."""


@dataclass
class MCEstimate:
    """Sample mean with its standard error.

    ``value`` and ``std_error`` have the same shape.  ``grid`` records the
    time grid or quadrature the estimate was computed on.
    """

    value: np.ndarray
    std_error: np.ndarray
    n_samples: int
    seed: int
    grid: Any = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        self.std_error = np.asarray(self.std_error, dtype=float)
        if not (np.all(np.isfinite(self.value)) and np.all(np.isfinite(self.std_error))):
            raise EstimatorError("estimate or standard error is not finite")

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int, grid=None, axis: int = 0, **diag):
        """Mean and standard error along ``axis`` of per-sample values."""
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[axis]
        mean = samples.mean(axis=axis)
        if n > 1:
            se = samples.std(axis=axis, ddof=1) / np.sqrt(n)
        else:
            se = np.zeros_like(mean)
        return cls(mean, se, n, seed, grid, dict(diag))

    def within(self, target, n_sigma: float = 3.0, extra: float = 0.0) -> np.ndarray:
        """Element-wise ``|value - target| <= n_sigma * std_error + extra``."""
        return np.abs(self.value - target) <= n_sigma * self.std_error + extra

    def __getitem__(self, idx) -> "MCEstimate":
        return MCEstimate(self.value[idx], self.std_error[idx], self.n_samples, self.seed,
                          self.grid, self.diagnostics)
