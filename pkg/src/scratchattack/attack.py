"""Attack orchestration: wire a scratch encoding, an optimizer, an objective
and a classifier together, and aggregate results into report tables.

Regimes:

* variable location (DE): the genome is the full scratch layout from
  :func:`~scratchattack.scratch.decode_candidate`, in either domain;
* fixed location (CMA-ES, network domain only): the mask is drawn once at
  random and the genome holds one RGB triple per mask pixel;
* caption: variable-location DE in the image domain minimizing the
  confidence reported by a captioning backend.

Query counts include the initial DE population. The clean image is
classified once, outside the query ledger, to establish the source class.
"""
from __future__ import annotations

import base64
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import scratch as sc
from .classifier import BudgetExhausted, QueryLedger, caption_predict, predict
from .es import CMAConfig, DEConfig, cma_optimize, de_optimize
from .fitness import TargetedSpec, confidence_fitness, targeted_fitness, untargeted_fitness


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    name: str = "attack"
    domain: str = "image"          # image | network
    location: str = "variable"     # variable | fixed
    optimizer: str = "de"          # de | cma
    shape: str = "bezier"          # bezier | line
    scratches: int = 1
    objective: str = "targeted"    # targeted | untargeted | caption
    target: Optional[int] = None   # None: drawn per image, never the source class
    alpha: float = 1.0
    beta: float = 50.0
    de: DEConfig = field(default_factory=DEConfig)
    cma: CMAConfig = field(default_factory=CMAConfig)
    budget: int = 2500
    seed: int = 0
    restarts: int = 1
    color_range: tuple = sc.NETWORK_COLOR_RANGE

    def __post_init__(self):
        choices = {"domain": ("image", "network"), "location": ("variable", "fixed"),
                   "optimizer": ("de", "cma"), "shape": ("bezier", "line"),
                   "objective": ("targeted", "untargeted", "caption")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise AttackConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.scratches < 1:
            raise AttackConfigError("need at least one scratch")
        if self.restarts < 1:
            raise AttackConfigError("restarts must be positive")
        if self.domain == "image" and (self.optimizer != "de" or self.location != "variable"):
            raise AttackConfigError("image-domain attacks use DE with variable scratch location")
        if self.location == "fixed" and (self.domain != "network" or self.optimizer != "cma"):
            raise AttackConfigError("fixed-location attacks are network-domain CMA-ES attacks")
        if self.location == "variable" and self.optimizer != "de":
            raise AttackConfigError("variable-location attacks use DE")
        if self.objective == "caption" and self.domain != "image":
            raise AttackConfigError("caption attacks are image-domain")
        if self.budget < self.population:
            raise AttackConfigError(f"budget {self.budget} is below the population {self.population}")

    @property
    def population(self) -> int:
        return self.de.population if self.optimizer == "de" else self.cma.population

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cma"]["mean0"] = None if self.cma.mean0 is None else np.asarray(self.cma.mean0).tolist()
        d["color_range"] = list(self.color_range)
        return d


PRESETS = {
    "cifar-targeted": AttackConfig(name="cifar-targeted", de=DEConfig(50, 50, 0.8, 0.7), budget=2500),
    "imagenet-untargeted": AttackConfig(name="imagenet-untargeted", objective="untargeted",
                                        de=DEConfig(100, 100, 0.8, 0.7), budget=10100),
    "cifar-fixed": AttackConfig(name="cifar-fixed", domain="network", location="fixed",
                                optimizer="cma", cma=CMAConfig(40, 40, None, 0.5),
                                budget=16000, restarts=10),
    "imagenet-fixed": AttackConfig(name="imagenet-fixed", domain="network", location="fixed",
                                   optimizer="cma", cma=CMAConfig(40, 400, None, 0.5),
                                   budget=160000, restarts=10),
    "network-variable": AttackConfig(name="network-variable", domain="network",
                                     de=DEConfig(50, 50, 0.8, 0.7), budget=2500),
    "caption": AttackConfig(name="caption", objective="caption", scratches=3,
                            de=DEConfig(50, 50, 0.8, 0.7), budget=2500),
}


@dataclass
class AttackResult:
    success: bool
    queries: int
    coverage: float
    image: np.ndarray
    params: list
    trace: list
    source: Optional[int] = None
    target: Optional[int] = None
    config: str = ""
    scratches: int = 1
    index: int = 0
    restart: int = 0
    mask_pixels: Optional[list] = None
    caption: Optional[str] = None
    confidence: Optional[float] = None

    def to_json(self) -> str:
        img = np.ascontiguousarray(self.image, dtype="<f8")
        d = {
            "config": self.config, "scratches": self.scratches, "index": self.index, "restart": self.restart,
            "source": self.source, "target": self.target, "success": self.success,
            "queries": self.queries, "coverage": self.coverage,
            "params": [float(v) for v in self.params],
            "mask_pixels": self.mask_pixels,
            "trace": [float(v) for v in self.trace],
            "caption": self.caption, "confidence": self.confidence,
            "image": {"shape": list(img.shape), "f8": base64.b64encode(img.tobytes()).decode()},
        }
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "AttackResult":
        d = json.loads(line)
        img = d.pop("image")
        image = np.frombuffer(base64.b64decode(img["f8"]), "<f8").reshape(img["shape"]).copy()
        return cls(image=image, **d)


class _Found(Exception):
    pass


class _Tracker:
    """Fitness wrapper state: per-generation best trace and the success hit."""

    def __init__(self, population: int):
        self.population = population
        self.evals = 0
        self.best_f = math.inf
        self.best = None
        self.trace = []
        self.hit = None

    def record(self, f: float, item) -> None:
        if f < self.best_f:
            self.best_f, self.best = f, item
        self.evals += 1
        if self.evals % self.population == 0:
            self.trace.append(self.best_f)

    def final_trace(self) -> list:
        if self.evals % self.population:
            return self.trace + [self.best_f]
        return list(self.trace)


def _argmax(p) -> int:
    return int(np.argmax(p))


def run_attack(x: np.ndarray, config: AttackConfig, classifier, ledger: Optional[QueryLedger] = None,
               source: Optional[int] = None, target: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> AttackResult:
    """Attack one image.

    ``target`` overrides ``config.target``; one of the two is required for
    targeted attacks. Success is checked after every query and ends the
    attack at once. Budget exhaustion ends it as a failure.
    """
    x = np.asarray(x, dtype=float)
    h, w = x.shape[:2]
    ledger = QueryLedger(config.budget) if ledger is None else ledger
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if config.objective == "caption":
        return _run_caption(x, config, classifier, ledger, rng)

    if source is None:
        source = _argmax(classifier.probabilities(x))
    target = config.target if target is None else target
    if config.objective == "targeted":
        if target is None:
            raise AttackConfigError("targeted attack without a target class")
        spec = TargetedSpec(target, source, config.alpha, config.beta)
        objective = lambda p: targeted_fitness(p, spec)  # noqa: E731
        succeeded = lambda p: _argmax(p) == target  # noqa: E731
    else:
        target = None
        objective = untargeted_fitness
        succeeded = lambda p: _argmax(p) != source  # noqa: E731

    tracker = _Tracker(config.population)
    mask_pixels = None

    if config.location == "variable":
        bounds = sc.encoding_bounds(config.shape, config.scratches, h, w, config.domain,
                                    config.color_range)

        def decode(v):
            return sc.decode_candidate(v, config.shape, config.scratches, h, w, config.domain)
    else:
        shapes = [sc.random_shape(config.shape, h, w, rng) for _ in range(config.scratches)]
        mask_pixels = sc.fixed_mask_pixels(shapes, h, w)
        m = len(mask_pixels)

        def decode(v):
            return [sc.PixelField(mask_pixels, np.asarray(v).reshape(m, 3))]

    def fitness(v):
        adv = sc.apply_scratches(x, decode(v), config.domain)
        p = predict(classifier, ledger, adv)
        f = objective(p)
        tracker.record(f, (np.array(v), adv))
        if succeeded(p):
            tracker.hit = (np.array(v), adv)
            raise _Found
        return f

    start = ledger.used
    try:
        if config.optimizer == "de":
            de_optimize(fitness, bounds, config.de, rng=rng)
        else:
            cma_optimize(fitness, config.cma, dim=3 * len(mask_pixels), rng=rng)
    except (_Found, BudgetExhausted):
        pass

    success = tracker.hit is not None
    v, adv = tracker.hit if success else (tracker.best if tracker.best is not None else (np.array([]), x))
    cov = sc.coverage([sc.union_mask(decode(v), h, w)], h, w) if v.size else 0.0
    return AttackResult(
        success=success, queries=ledger.used - start, coverage=cov, image=adv,
        params=v.tolist(), trace=tracker.final_trace(), source=source, target=target,
        config=config.name, scratches=config.scratches,
        mask_pixels=None if mask_pixels is None else mask_pixels.tolist())


def _run_caption(x, config, captioner, ledger, rng) -> AttackResult:
    h, w = x.shape[:2]
    clean_caption, _ = captioner.caption(x)
    bounds = sc.encoding_bounds(config.shape, config.scratches, h, w, "image")
    tracker = _Tracker(config.population)

    def decode(v):
        return sc.decode_candidate(v, config.shape, config.scratches, h, w, "image")

    def fitness(v):
        adv = sc.apply_scratches(x, decode(v), "image")
        text, conf = caption_predict(captioner, ledger, adv)
        f = confidence_fitness(conf)
        tracker.record(f, (np.array(v), adv, text, conf))
        if text is None:
            tracker.hit = (np.array(v), adv, text, conf)
            raise _Found
        return f

    start = ledger.used
    try:
        de_optimize(fitness, bounds, config.de, rng=rng)
    except (_Found, BudgetExhausted):
        pass
    v, adv, text, conf = tracker.hit or tracker.best
    return AttackResult(
        success=text != clean_caption, queries=ledger.used - start,
        coverage=sc.coverage([sc.union_mask(decode(v), h, w)], h, w), image=adv,
        params=v.tolist(), trace=tracker.final_trace(), config=config.name,
        scratches=config.scratches, caption=text, confidence=conf)


# --------------------------------------------------------------------------
# batches and reports


@dataclass
class ReportRow:
    config: str
    scratches: int
    attempts: int
    successes: int

    success_rate: Optional[float] = None
    mean_queries: Optional[float] = None
    mean_coverage: Optional[float] = None


@dataclass
class ReportTable:
    rows: list
    eligible: int
    results: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["Scratches", "Success Rate", "Queries", "Coverage"])
            for r in self.rows:
                wr.writerow([r.scratches, _fmt(r.success_rate), _fmt(r.mean_queries),
                             _fmt(r.mean_coverage)])


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def summarize(results: Sequence[AttackResult], config: AttackConfig) -> ReportRow:
    """Success rate over all attempts; query and coverage means over successes only."""
    row = ReportRow(config.name, config.scratches, len(results), sum(r.success for r in results))
    if results:
        row.success_rate = 100.0 * row.successes / row.attempts
    wins = [r for r in results if r.success]
    if wins:
        row.mean_queries = float(np.mean([r.queries for r in wins]))
        row.mean_coverage = float(np.mean([r.coverage for r in wins]))
    return row


def image_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def pick_target(seed: int, index: int, source: int, num_classes: int) -> int:
    """Random target class != source, fixed per (seed, image index)."""
    rng = image_rng(seed, index, 0x7A)
    t = int(rng.integers(num_classes - 1))
    return t + (t >= source)


def run_batch(dataset, configs: Sequence[AttackConfig], classifier, workers: int = 1) -> ReportTable:
    """Attack every correctly classified image of ``dataset`` with every config.

    ``dataset`` is a sequence of ``(image, label)``. Fixed-location configs
    attack each image ``restarts`` times with fresh masks. Each attack gets
    its own ledger and random stream derived from (seed, image index,
    restart), so results do not depend on ``workers``.
    """
    eligible = []
    for i, (img, label) in enumerate(dataset):
        if _argmax(classifier.probabilities(img)) == int(label):
            eligible.append((i, np.asarray(img, dtype=float), int(label)))

    rows, all_results = [], []
    for config in configs:
        jobs = []
        for i, img, label in eligible:
            target = config.target
            if config.objective == "targeted" and target is None:
                target = pick_target(config.seed, i, label, classifier.num_classes)
            for r in range(config.restarts if config.location == "fixed" else 1):
                jobs.append((i, r, img, label, target))

        def one(job, config=config):
            i, r, img, label, target = job
            res = run_attack(img, config, classifier, QueryLedger(config.budget), source=label,
                             target=target, rng=image_rng(config.seed, i, r))
            res.index, res.restart = i, r
            return res

        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                results = list(ex.map(one, jobs))
        else:
            results = [one(j) for j in jobs]
        rows.append(summarize(results, config))
        all_results.extend(results)
    return ReportTable(rows, len(eligible), all_results)


def write_jsonl(results: Sequence[AttackResult], path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [AttackResult.from_json(line) for line in fh if line.strip()]


@dataclass
class SourceTargetMatrix:
    cells: np.ndarray        # mean queries, NaN where no successful attack
    counts: np.ndarray
    row_means: np.ndarray
    col_means: np.ndarray

    def to_csv(self, path, labels=None) -> None:
        k = len(self.cells)
        labels = list(labels) if labels else [str(i) for i in range(k)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["source\\target", *labels, "mean"])
            for s in range(k):
                wr.writerow([labels[s], *(_cell(v) for v in self.cells[s]), _cell(self.row_means[s])])
            wr.writerow(["mean", *(_cell(v) for v in self.col_means), ""])


def _cell(v) -> str:
    return "" if np.isnan(v) else f"{v:.2f}"


def source_target_analysis(results: Sequence[AttackResult], num_classes: int) -> SourceTargetMatrix:
    """Mean queries of successful attacks per (source, target) pair.

    Row and column means pool every successful attack with that source
    (resp. target). Cells without a success are NaN.
    """
    k = num_classes
    sums = np.zeros((k, k))
    counts = np.zeros((k, k), dtype=int)
    for r in results:
        if r.success and r.source is not None and r.target is not None:
            sums[r.source, r.target] += r.queries
            counts[r.source, r.target] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        cells = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        rc, cc = counts.sum(1), counts.sum(0)
        row_means = np.where(rc > 0, sums.sum(1) / np.maximum(rc, 1), np.nan)
        col_means = np.where(cc > 0, sums.sum(0) / np.maximum(cc, 1), np.nan)
    return SourceTargetMatrix(cells, counts, row_means, col_means)


def with_overrides(config: AttackConfig, **kw) -> AttackConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
