"""Bayesian-optimization loop: acquisition, proposal, ingestion, regret.

Minimization convention throughout: the acquisition is the lower confidence
bound mean - beta * std and the proposal minimizes it.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from ._linalg import InputError, NumericalError
from .gp import GaussianPrediction, TaskDataset
from .models import ModelFitter

__all__ = [
    "Domain",
    "DomainExhausted",
    "BORecord",
    "BOTrace",
    "BORunConfig",
    "Objective",
    "acquisition_lcb",
    "propose_next",
    "run_bo",
    "regret_metrics",
]

CONTINUOUS = "continuous-box"
DISCRETE = "discrete-candidates"

# proposal tuning: random candidates per input dimension, refined pool size,
# golden-section tolerance as a fraction of the box width
CANDIDATES_PER_DIM = 1000
REFINE_TOP = 5
REFINE_TOL = 1e-4
REFINE_SWEEPS = 2
INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class DomainExhausted(RuntimeError):
    """Every discrete candidate has already been observed."""


@dataclass(frozen=True)
class Domain:
    """Search domain: a continuous box or a finite candidate set."""

    kind: str
    bounds: np.ndarray = None
    candidates: np.ndarray = None

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            bounds = np.asarray(self.bounds, dtype=float)
            if bounds.ndim != 2 or bounds.shape[1] != 2:
                raise InputError("bounds must be a (D, 2) array")
            if np.any(bounds[:, 0] >= bounds[:, 1]):
                raise InputError("each dimension needs lo < hi")
            object.__setattr__(self, "bounds", bounds)
        elif self.kind == DISCRETE:
            cands = np.asarray(self.candidates, dtype=float)
            if cands.ndim != 2 or cands.shape[0] == 0:
                raise InputError("candidate set must be a non-empty (C, D) array")
            seen = set()
            for row in cands:
                key = row.tobytes()
                if key in seen:
                    raise InputError("candidate set contains duplicate rows")
                seen.add(key)
            object.__setattr__(self, "candidates", cands)
        else:
            raise InputError(f"unknown domain kind: {self.kind}")

    @classmethod
    def continuous(cls, bounds):
        return cls(CONTINUOUS, bounds=bounds)

    @classmethod
    def discrete(cls, candidates):
        return cls(DISCRETE, candidates=candidates)

    @property
    def input_dim(self):
        if self.kind == CONTINUOUS:
            return self.bounds.shape[0]
        return self.candidates.shape[1]


def acquisition_lcb(pred, beta):
    """Lower-confidence-bound scores mean - beta * std; lower is better.

    Accepts a GaussianPrediction or a (mean, variance) pair; negative
    variances from round-off are clamped at zero.
    """
    if beta < 0:
        raise InputError("beta must be >= 0")
    if isinstance(pred, GaussianPrediction):
        mean, var = pred.mean, pred.variance
    else:
        mean, var = pred
        var = np.maximum(np.asarray(var, dtype=float), 0.0)
    return np.asarray(mean, dtype=float) - beta * np.sqrt(var)


def _scores(model, X, beta):
    mean, var = model.predict_mean_var(X)
    return acquisition_lcb((mean, var), beta)


def _golden_section_batch(score_coord, n, lo, hi, tol):
    """Golden-section minimization of n independent scalar sections at once.

    score_coord(values) scores coordinate candidates, one per section. Every
    section shares the same bracket width, so all shrink in lockstep with one
    batched evaluation per iteration.
    """
    a = np.full(n, lo)
    b = np.full(n, hi)
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc = score_coord(c)
    fd = score_coord(d)
    while (b[0] - a[0]) > tol:
        left = fc <= fd
        a_new = np.where(left, a, c)
        b_new = np.where(left, d, b)
        c_new = b_new - INV_GOLDEN * (b_new - a_new)
        d_new = a_new + INV_GOLDEN * (b_new - a_new)
        # the surviving interior point carries its score; score the other
        probe = np.where(left, c_new, d_new)
        fp = score_coord(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        a, b, c, d = a_new, b_new, c_new, d_new
    return (a + b) / 2.0


def propose_next(model, domain, beta, rng):
    """Select the next query point by minimizing the confidence bound.

    Continuous domains: score 1000*D uniform candidates, then refine the
    best few with coordinate-wise golden-section line searches down to 1e-4
    of each box width. Discrete domains: exhaustive argmin over candidates
    not yet observed (exact ties resolve to the lowest index).
    """
    rng = np.random.default_rng(rng)
    if domain.kind == DISCRETE:
        observed = {row.tobytes() for row in np.asarray(model.target_inputs)}
        mask = np.array(
            [row.tobytes() not in observed for row in domain.candidates]
        )
        if not np.any(mask):
            raise DomainExhausted("all discrete candidates have been observed")
        open_idx = np.flatnonzero(mask)
        scores = _scores(model, domain.candidates[open_idx], beta)
        return domain.candidates[open_idx[int(np.argmin(scores))]].copy()

    bounds = domain.bounds
    dim = bounds.shape[0]
    widths = bounds[:, 1] - bounds[:, 0]
    cands = rng.uniform(bounds[:, 0], bounds[:, 1], size=(CANDIDATES_PER_DIM * dim, dim))
    scores = _scores(model, cands, beta)
    order = np.argsort(scores, kind="stable")[:REFINE_TOP]
    best_x = cands[order[0]].copy()
    best_score = float(scores[order[0]])
    pool = cands[order].copy()
    for _ in range(REFINE_SWEEPS):
        for d in range(dim):
            def score_coord(values, _d=d):
                probes = pool.copy()
                probes[:, _d] = values
                return _scores(model, probes, beta)

            pool[:, d] = _golden_section_batch(
                score_coord, pool.shape[0], bounds[d, 0], bounds[d, 1],
                REFINE_TOL * widths[d],
            )
    refined = _scores(model, pool, beta)
    idx = int(np.argmin(refined))
    if refined[idx] < best_score:
        return pool[idx].copy()
    return best_x


@dataclass(frozen=True)
class Objective:
    """Noise-free target objective over a domain."""

    domain: Domain
    evaluate_true: callable = field(repr=False)
    description: str = ""
    true_minimum: float = None
    value_range: tuple = None  # (y_min, y_max) for ADTM rescaling, if known


@dataclass(frozen=True)
class BORecord:
    iteration: int
    x: np.ndarray
    y_observed: float
    f_true: float
    best_so_far: float
    train_ms: float
    acq_ms: float


@dataclass(frozen=True)
class BOTrace:
    """Per-iteration record of one optimization run."""

    seed: int
    model_kind: str
    task: str
    records: tuple
    aborted: bool = False
    exhausted: bool = False
    failure: str = ""

    @property
    def best_so_far(self):
        return np.array([r.best_so_far for r in self.records])


@dataclass(frozen=True)
class BORunConfig:
    model_kind: str
    sources: tuple
    objective: Objective
    sigma_target: float
    iterations: int
    seed: int
    beta: float = 3.0
    n_restarts: int = 10
    task_label: str = ""

    def __post_init__(self):
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        if self.sigma_target < 0:
            raise InputError("sigma_target must be >= 0")


def run_bo(config):
    """Run one optimization from zero target observations.

    Each iteration retrains the model on the accumulated target data (joint
    kinds fully; sequential kinds refit the target stage only), proposes by
    confidence-bound minimization, observes the objective with Gaussian
    noise, and records timing plus the best noise-free value so far. A
    training failure aborts the run with the partial trace.
    """
    domain = config.objective.domain
    fitter = ModelFitter(config.model_kind, config.sources, config.n_restarts)
    seq = np.random.SeedSequence(config.seed)
    train_rng, prop_rng, noise_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    target = TaskDataset.empty(domain.input_dim, task_id=len(config.sources))
    records = []
    best = np.inf
    aborted = False
    exhausted = False
    failure = ""
    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        try:
            model = fitter.fit(target, train_rng)
        except NumericalError as err:
            aborted = True
            failure = f"iteration {it}: {err}"
            break
        train_ms = (time.perf_counter() - t0) * 1e3
        t1 = time.perf_counter()
        try:
            x = propose_next(model, domain, config.beta, prop_rng)
        except DomainExhausted:
            exhausted = True
            break
        acq_ms = (time.perf_counter() - t1) * 1e3
        f_true = float(config.objective.evaluate_true(x))
        noise = config.sigma_target * noise_rng.standard_normal() if config.sigma_target else 0.0
        y = f_true + noise
        best = min(best, f_true)
        records.append(
            BORecord(
                iteration=it,
                x=np.asarray(x, dtype=float),
                y_observed=y,
                f_true=f_true,
                best_so_far=best,
                train_ms=train_ms,
                acq_ms=acq_ms,
            )
        )
        target = target.appended(x, y)
    return BOTrace(
        seed=config.seed,
        model_kind=str(config.model_kind),
        task=config.task_label or config.objective.description,
        records=tuple(records),
        aborted=aborted,
        exhausted=exhausted,
        failure=failure,
    )


def regret_metrics(trace, true_min, y_min_rescale=None, y_max_rescale=None):
    """Simple-regret and ADTM series of a trace.

    Simple regret is best-so-far minus the true minimum. ADTM rescales the
    best-so-far into [0, 1] by the task's value range; it requires both
    rescale bounds and a non-degenerate range.
    """
    if not np.isfinite(true_min):
        raise InputError("true_min must be finite")
    bsf = trace.best_so_far
    regret = bsf - true_min
    adtm = None
    if y_min_rescale is not None and y_max_rescale is not None:
        if y_max_rescale == y_min_rescale:
            raise InputError("degenerate rescale range for ADTM")
        adtm = np.clip(
            (bsf - y_min_rescale) / (y_max_rescale - y_min_rescale), 0.0, 1.0
        )
    return regret, adtm
