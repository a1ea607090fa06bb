"""Population-based optimizers: bounded Differential Evolution and CMA-ES.

Both minimize a scalar fitness over real vectors. Non-finite fitness values
are treated as errors rather than as "worst" values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Fitness = Callable[[np.ndarray], float]
StopPredicate = Callable[[float], bool]


class OptimizerError(RuntimeError):
    """Raised for invalid optimizer input or a numerically broken state."""


class CovarianceError(OptimizerError):
    """The covariance matrix is no longer positive-definite."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"covariance matrix not positive-definite (eigenvalue {eigenvalue!r})")
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise OptimizerError(f"bounds shape mismatch: {lower.shape} vs {upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise OptimizerError("bounds must be finite")
        if np.any(lower > upper):
            raise OptimizerError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def scale(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube affinely into the box."""
        return self.lower + u * (self.upper - self.lower)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class DEConfig:
    population: int = 50
    iterations: int = 50
    mutation: float = 0.8
    crossover: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise OptimizerError("DE needs a population of at least 4")
        if self.iterations < 1:
            raise OptimizerError("iterations must be positive")
        if not self.mutation > 0:
            raise OptimizerError("mutation must be positive")
        if not 0.0 <= self.crossover <= 1.0:
            raise OptimizerError("crossover must lie in [0, 1]")


@dataclass(frozen=True)
class CMAConfig:
    population: int = 40
    iterations: int = 40
    mean0: Optional[np.ndarray] = None  # zeros of the problem dimension when None
    sigma0: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise OptimizerError("CMA-ES needs a population of at least 2")
        if self.iterations < 1:
            raise OptimizerError("iterations must be positive")
        if not self.sigma0 > 0:
            raise OptimizerError("sigma0 must be positive")


@dataclass
class OptimizationOutcome:
    best: np.ndarray
    best_fitness: float
    evaluations: int
    terminated_early: bool
    trace: list = field(default_factory=list)  # best-so-far fitness after each generation


def _evaluate(fitness: Fitness, x: np.ndarray, counter: list) -> float:
    try:
        value = float(fitness(x))
    except Exception as exc:
        exc.evaluations = counter[0]
        raise
    counter[0] += 1
    if not np.isfinite(value):
        err = OptimizerError(f"non-finite fitness {value!r}")
        err.evaluations = counter[0]
        raise err
    return value


# --------------------------------------------------------------------------
# Differential Evolution (rand/1/bin)


def de_step(population, fitnesses, config: DEConfig, bounds: Bounds, fitness: Fitness,
            rng: np.random.Generator, _counter=None):
    """One generation of rand/1/bin DE with greedy selection.

    All trial vectors are built from the population as it stood at the start
    of the generation; results are committed in member order. Returns the new
    ``(population, fitnesses)``; the inputs are not modified.
    """
    population = np.asarray(population, dtype=float)
    fitnesses = np.asarray(fitnesses, dtype=float)
    lam, n = population.shape
    if n != bounds.dim:
        raise OptimizerError(f"population has {n} columns, bounds have {bounds.dim}")
    if fitnesses.shape != (lam,):
        raise OptimizerError(f"expected {lam} fitness values, got {fitnesses.shape}")
    if lam < 4:
        raise OptimizerError("DE needs a population of at least 4")
    counter = _counter if _counter is not None else [0]

    trials = np.empty_like(population)
    for j in range(lam):
        a, b, c = rng.choice(lam, size=3, replace=False)
        mutant = bounds.clip(population[a] + config.mutation * (population[b] - population[c]))
        r = rng.random(n)
        trials[j] = np.where(r <= config.crossover, mutant, population[j])

    new_pop = population.copy()
    new_fit = fitnesses.copy()
    for j in range(lam):
        f = _evaluate(fitness, trials[j], counter)
        if f <= fitnesses[j]:
            new_pop[j] = trials[j]
            new_fit[j] = f
    return new_pop, new_fit


def de_optimize(fitness: Fitness, bounds: Bounds, config: DEConfig,
                stop: Optional[StopPredicate] = None,
                rng: Optional[np.random.Generator] = None) -> OptimizationOutcome:
    """Minimize ``fitness`` inside ``bounds``.

    The stop predicate is consulted with the best fitness found so far after
    the initial population and after every generation. Exceptions raised by
    ``fitness`` propagate with an ``evaluations`` attribute attached.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    lam, n = config.population, bounds.dim
    counter = [0]

    population = bounds.scale(rng.random((lam, n)))
    fitnesses = np.array([_evaluate(fitness, x, counter) for x in population])

    # best-ever, replaced only on strict improvement so ties keep the earliest
    best_idx = int(np.argmin(fitnesses))
    best, best_f = population[best_idx].copy(), float(fitnesses[best_idx])
    trace = [best_f]
    if stop is not None and stop(best_f):
        return OptimizationOutcome(best, best_f, counter[0], True, trace)

    for _ in range(config.iterations):
        population, fitnesses = de_step(population, fitnesses, config, bounds, fitness, rng,
                                        _counter=counter)
        idx = int(np.argmin(fitnesses))
        if fitnesses[idx] < best_f:
            best, best_f = population[idx].copy(), float(fitnesses[idx])
        trace.append(best_f)
        if stop is not None and stop(best_f):
            return OptimizationOutcome(best, best_f, counter[0], True, trace)
    return OptimizationOutcome(best, best_f, counter[0], False, trace)


# --------------------------------------------------------------------------
# CMA-ES


@dataclass
class CMAParams:
    """Strategy constants, tutorial defaults for dimension n and population lam."""

    n: int
    lam: int
    mu: int
    weights: np.ndarray
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chi_n: float

    @classmethod
    def default(cls, n: int, lam: int) -> "CMAParams":
        mu = lam // 2
        w = np.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
        w = w / w.sum()
        mueff = 1.0 / np.sum(w ** 2)
        cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        cs = (mueff + 2) / (n + mueff + 5)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (n + 1)) - 1) + cs
        chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))
        return cls(n, lam, mu, w, mueff, cc, cs, c1, cmu, damps, chi_n)


@dataclass
class CMAState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0

    @classmethod
    def initial(cls, mean0, sigma0: float) -> "CMAState":
        mean0 = np.asarray(mean0, dtype=float).ravel()
        n = mean0.size
        return cls(mean0.copy(), float(sigma0), np.eye(n), np.zeros(n), np.zeros(n))

    @property
    def dim(self) -> int:
        return self.mean.size


def _eigh(C: np.ndarray):
    eigvals, B = np.linalg.eigh(C)
    if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0:
        raise CovarianceError(float(eigvals.min()))
    return eigvals, B


def cma_ask(state: CMAState, lam: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``lam`` samples from N(mean, sigma^2 C)."""
    eigvals, B = _eigh(state.C)
    z = rng.standard_normal((lam, state.dim))
    y = (z * np.sqrt(eigvals)) @ B.T
    return state.mean + state.sigma * y


def cma_tell(state: CMAState, samples, fitnesses, params: Optional[CMAParams] = None) -> CMAState:
    """Rank the samples and return the updated strategy state."""
    samples = np.asarray(samples, dtype=float)
    fitnesses = np.asarray(fitnesses, dtype=float)
    lam, n = samples.shape
    if fitnesses.shape != (lam,):
        raise OptimizerError(f"expected {lam} fitness values, got {fitnesses.shape}")
    if n != state.dim:
        raise OptimizerError(f"samples have dimension {n}, state has {state.dim}")
    if np.any(np.isnan(fitnesses)):
        raise OptimizerError("NaN fitness: ranking undefined")
    p = params if params is not None else CMAParams.default(n, lam)

    order = np.argsort(fitnesses, kind="stable")
    selected = samples[order[: p.mu]]
    old_mean = state.mean
    sigma = state.sigma
    mean = p.weights @ selected
    y_w = (mean - old_mean) / sigma

    eigvals, B = _eigh(state.C)
    inv_sqrt_C = (B / np.sqrt(eigvals)) @ B.T
    p_sigma = (1 - p.cs) * state.p_sigma + np.sqrt(p.cs * (2 - p.cs) * p.mueff) * (inv_sqrt_C @ y_w)
    gen = state.generation + 1
    ps_norm = np.linalg.norm(p_sigma)
    h_sigma = ps_norm / np.sqrt(1 - (1 - p.cs) ** (2 * gen)) / p.chi_n < 1.4 + 2 / (n + 1)
    p_c = (1 - p.cc) * state.p_c + h_sigma * np.sqrt(p.cc * (2 - p.cc) * p.mueff) * y_w

    y = (selected - old_mean) / sigma
    rank_mu = (y.T * p.weights) @ y
    delta_h = (1 - h_sigma) * p.cc * (2 - p.cc)
    C = ((1 - p.c1 - p.cmu) * state.C
         + p.c1 * (np.outer(p_c, p_c) + delta_h * state.C)
         + p.cmu * rank_mu)
    C = (C + C.T) / 2

    sigma = sigma * np.exp((p.cs / p.damps) * (ps_norm / p.chi_n - 1))
    return CMAState(mean, float(sigma), C, p_sigma, p_c, gen)


def cma_optimize(fitness: Fitness, config: CMAConfig, stop: Optional[StopPredicate] = None,
                 dim: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None) -> OptimizationOutcome:
    """Minimize ``fitness`` with CMA-ES, returning the best candidate ever sampled.

    ``dim`` is required when ``config.mean0`` is None.
    """
    if config.mean0 is None:
        if dim is None:
            raise OptimizerError("need either config.mean0 or dim")
        mean0 = np.zeros(dim)
    else:
        mean0 = np.asarray(config.mean0, dtype=float)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    state = CMAState.initial(mean0, config.sigma0)
    params = CMAParams.default(state.dim, config.population)
    counter = [0]
    best, best_f = None, np.inf
    trace = []
    for _ in range(config.iterations):
        samples = cma_ask(state, config.population, rng)
        fits = np.array([_evaluate(fitness, x, counter) for x in samples])
        idx = int(np.argmin(fits))
        if fits[idx] < best_f:
            best, best_f = samples[idx].copy(), float(fits[idx])
        trace.append(best_f)
        if stop is not None and stop(best_f):
            return OptimizationOutcome(best, best_f, counter[0], True, trace)
        state = cma_tell(state, samples, fits, params)
    return OptimizationOutcome(best, best_f, counter[0], False, trace)
