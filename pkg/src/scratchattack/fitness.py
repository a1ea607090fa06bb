"""Objectives for the optimizers. Lower is better everywhere.

The targeted score and the prediction entropy are quantities an attacker wants
to *raise*, so both are returned negated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

EPS = 1e-12


class FitnessError(ValueError):
    pass


@dataclass(frozen=True)
class TargetedSpec:
    target: int
    source: int
    alpha: float = 1.0
    beta: float = 50.0

    def __post_init__(self):
        if self.target == self.source:
            raise FitnessError("target and source class must differ")


def check_probs(p, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size < 2 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1) > tol:
        raise FitnessError("not a probability vector")
    return p


def targeted_fitness(p, spec: TargetedSpec) -> float:
    """``-(alpha*log p[t] - beta*log p[s])``."""
    p = check_probs(p)
    k = p.size
    if not (0 <= spec.target < k and 0 <= spec.source < k):
        raise FitnessError(f"class index out of range for {k} classes")
    return -(spec.alpha * np.log(p[spec.target] + EPS) - spec.beta * np.log(p[spec.source] + EPS))


def untargeted_fitness(p) -> float:
    """Negative entropy, sum_i p_i log p_i; minimal for the uniform distribution."""
    p = check_probs(p)
    return float(np.sum(p * np.log(p + EPS)))


def confidence_fitness(confidence: Optional[float]) -> float:
    """Caption confidence, minimized directly. A missing caption scores 0."""
    if confidence is None:
        return 0.0
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        raise FitnessError(f"confidence {confidence} outside [0, 1]")
    return confidence
