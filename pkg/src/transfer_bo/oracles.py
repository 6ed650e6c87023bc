"""Independent Monte-Carlo and timing oracles for the closed-form models.

The sampling oracles verify the transfer posteriors by brute force: draw
functional samples from the source posterior, build the implied per-sample
target model, and moment-match the resulting mixture. They use only the
single-task GP primitives, never the transfer-model code paths they check.

Two averaging modes mirror the two closed-form constructions:

* prior averaging weights every source sample by how well it explains the
  target observations (self-normalized importance weights); its limit is the
  sequentially conditioned hierarchical posterior (SHGP).
* posterior averaging weights samples uniformly, deliberately ignoring what
  the target data say about the source; its limit is the boosted model
  (BHGP).
"""

import time
from dataclasses import dataclass

import numpy as np

from ._linalg import (
    InputError,
    chol_solve,
    chol_with_jitter,
    solve_lower,
    symmetrize,
)
from .gp import KernelHyperparams, TaskDataset, kernel_eval
from .models import ModelKind
from .models.joint import JointLikelihood
from .models.sequential import make_sequential_model, source_chain
from .models.wsgp import _WSGPLikelihood

__all__ = [
    "McEstimate",
    "TimingRecord",
    "mc_prior_average",
    "mc_posterior_average",
    "lemma1_check",
    "Lemma1Report",
    "timing_sweep",
    "fit_loglog_slope",
]

MIN_MC_SAMPLES = 100
SE_BATCHES = 25
TIMEABLE_KINDS = ("HGP", "MTGP", "MTKGP", "WSGP", "SHGP", "BHGP", "MHGP")


@dataclass(frozen=True)
class McEstimate:
    """Moment-matched mixture estimate with per-entry standard errors."""

    sample_count: int
    mean: np.ndarray
    covariance: np.ndarray
    se_mean: np.ndarray
    se_variance: np.ndarray
    effective_sample_size: float

    def __post_init__(self):
        if self.sample_count < 2:
            raise InputError("Monte-Carlo estimate needs at least 2 samples")
        if np.any(self.se_mean <= 0) or np.any(self.se_variance <= 0):
            raise InputError("standard errors must be positive")


def _mc_ensemble(source_gp, target_data, target_hp, Xq, M, rng, weighted):
    if M < MIN_MC_SAMPLES:
        raise InputError(f"need at least {MIN_MC_SAMPLES} samples")
    rng = np.random.default_rng(rng)
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Xt = target_data.inputs
    yt = target_data.observations
    n_t = target_data.n_points
    joint_pts = np.vstack([Xt, Xq]) if n_t else Xq

    source_post = source_gp.predict(joint_pts)
    L_src, _ = chol_with_jitter(source_post.covariance)

    # per-sample target posterior pieces; the covariance part is shared
    post_cov = kernel_eval(target_hp, Xq, Xq)
    if n_t:
        Kt = kernel_eval(target_hp, Xt, Xt)
        Kt[np.diag_indices_from(Kt)] += target_hp.noise_variance
        Lt, _ = chol_with_jitter(Kt)
        Ktq = kernel_eval(target_hp, Xt, Xq)
        gain = chol_solve(Lt, Ktq).T  # (n_q, n_t)
        post_cov = symmetrize(post_cov - gain @ Ktq)

    eps = rng.standard_normal((M, joint_pts.shape[0]))
    samples = source_post.mean[None, :] + eps @ L_src.T
    if n_t:
        sample_t = samples[:, :n_t]
        sample_q = samples[:, n_t:]
        means = sample_q + (yt[None, :] - sample_t) @ gain.T
        if weighted:
            resid = yt[None, :] - sample_t
            V = solve_lower(Lt, resid.T)
            log_w = -0.5 * np.sum(V * V, axis=0)
        else:
            log_w = np.zeros(M)
    else:
        means = samples
        log_w = np.zeros(M)

    def mixture_moments(mean_block, logw_block):
        w = np.exp(logw_block - np.max(logw_block))
        w = w / np.sum(w)
        mu = w @ mean_block
        centered = mean_block - mu
        cov_means = (centered * w[:, None]).T @ centered
        return mu, cov_means, w

    mu, cov_means, w = mixture_moments(means, log_w)
    covariance = symmetrize(post_cov + cov_means)
    ess = 1.0 / float(np.sum(w ** 2))

    # batch-means standard errors for the mean and the diagonal variance
    edges = np.linspace(0, M, SE_BATCHES + 1).astype(int)
    batch_means, batch_vars = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        bmu, bcov, _ = mixture_moments(means[lo:hi], log_w[lo:hi])
        batch_means.append(bmu)
        batch_vars.append(np.diag(post_cov) + np.diag(bcov))
    batch_means = np.asarray(batch_means)
    batch_vars = np.asarray(batch_vars)
    se_mean = np.std(batch_means, axis=0, ddof=1) / np.sqrt(SE_BATCHES) + 1e-12
    se_var = np.std(batch_vars, axis=0, ddof=1) / np.sqrt(SE_BATCHES) + 1e-12
    return McEstimate(
        sample_count=M,
        mean=mu,
        covariance=covariance,
        se_mean=se_mean,
        se_variance=se_var,
        effective_sample_size=ess,
    )


def mc_prior_average(source_gp, target_data, target_hp, Xq, M, rng):
    """Ensemble-of-priors oracle (limit: the SHGP posterior).

    Draws source-posterior samples at the target and query points, treats
    each as the target prior mean, conditions on the target data, and
    moment-matches the mixture with samples weighted by the marginal
    likelihood they assign to the target observations.
    """
    return _mc_ensemble(source_gp, target_data, target_hp, Xq, M, rng, weighted=True)


def mc_posterior_average(source_gp, target_data, target_hp, Xq, M, rng):
    """Ensemble-of-posteriors oracle (limit: the BHGP prediction).

    Identical sampling, but the per-sample posteriors are averaged with
    uniform weights, ignoring the source's dependence on the target data.
    """
    return _mc_ensemble(source_gp, target_data, target_hp, Xq, M, rng, weighted=False)


@dataclass(frozen=True)
class Lemma1Report:
    passed: bool
    max_mean_sigmas: float
    max_cov_sigmas: float
    sample_count: int


def lemma1_check(mu, L, Sigma, M, rng):
    """Sampling identity check: Y|eps ~ N(mu + L eps, Sigma) with standard
    normal eps implies Y ~ N(mu, Sigma + L L^T).

    Empirical mean and covariance of M draws must sit within 4 standard
    errors of the closed form, entrywise.
    """
    rng = np.random.default_rng(rng)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p, q = L.shape
    if mu.shape[0] != p or Sigma.shape != (p, p):
        raise InputError("inconsistent shapes for the sampling identity")
    L_sig, _ = chol_with_jitter(Sigma)
    eps = rng.standard_normal((M, q))
    eta = rng.standard_normal((M, p))
    Y = mu[None, :] + eps @ L.T + eta @ L_sig.T

    target_cov = Sigma + L @ L.T
    emp_mean = Y.mean(axis=0)
    emp_cov = np.cov(Y, rowvar=False, ddof=1).reshape(p, p)

    se_mean = np.sqrt(np.diag(target_cov) / M) + 1e-12
    mean_sigmas = np.abs(emp_mean - mu) / se_mean
    dd = np.diag(target_cov)
    se_cov = np.sqrt((np.outer(dd, dd) + target_cov ** 2) / (M - 1)) + 1e-12
    cov_sigmas = np.abs(emp_cov - target_cov) / se_cov
    return Lemma1Report(
        passed=bool(np.all(mean_sigmas <= 4.0) and np.all(cov_sigmas <= 4.0)),
        max_mean_sigmas=float(np.max(mean_sigmas)),
        max_cov_sigmas=float(np.max(cov_sigmas)),
        sample_count=M,
    )


@dataclass(frozen=True)
class TimingRecord:
    kind: str
    stage: str
    n_s: int
    N_s: int
    N_t: int
    rep: int
    ms: float

    def __post_init__(self):
        if self.ms <= 0:
            raise InputError("timing records require positive durations")


def _smooth_values(X, rng):
    return np.sin(3.0 * X @ np.arange(1, X.shape[1] + 1)) + 0.05 * rng.standard_normal(
        X.shape[0]
    )


def _make_step(kind, source, target, input_dim):
    """One target-training step of a kind, at fixed hyperparameters.

    Joint kinds: one marginal-likelihood gradient evaluation of the stacked
    system (the whole step depends on the source size). Sequential kinds:
    the source-dependent transfer work of one target-training step, namely
    evaluating the source chain's mean (MHGP) or mean and covariance
    (SHGP/BHGP) at the target inputs; their remaining per-step cost is
    independent of the source size.
    """
    kind = str(kind)
    if kind in ("HGP", "MTGP", "MTKGP"):
        lik = JointLikelihood(kind, [source, target], input_dim)
        raw = lik.default_free()
        return lambda: lik.value_and_grad(raw)
    if kind == "WSGP":
        lik = _WSGPLikelihood([source, target], input_dim)
        raw = lik.default_free()
        return lambda: lik.value_and_grad(raw)
    hp = KernelHyperparams.default(input_dim)
    seq_kind = ModelKind(kind)
    levels = make_sequential_model(
        seq_kind, [source, TaskDataset.empty(input_dim, 1)], [hp, hp]
    ).source_levels
    Xt = target.inputs
    return lambda: source_chain(seq_kind, levels, Xt)


def _time_once(step):
    t0 = time.perf_counter()
    step()
    return time.perf_counter() - t0


def _measure(step, min_time=1e-4):
    """Single timed execution, escalating inner repeats when the duration is
    below timer resolution."""
    elapsed = _time_once(step)
    repeats = 1
    while elapsed < min_time and repeats < 4096:
        repeats *= 4
        t0 = time.perf_counter()
        for _ in range(repeats):
            step()
        elapsed = (time.perf_counter() - t0) / repeats
    return elapsed


def fit_loglog_slope(sizes, times):
    sizes = np.asarray(sizes, dtype=float)
    times = np.asarray(times, dtype=float)
    if sizes.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def timing_sweep(kinds, ns_grid, nt_fixed, reps, rng=0, input_dim=6):
    """Time one target-training step per kind over a grid of source sizes.

    Returns (records, slopes): per-repetition TimingRecords and the fitted
    log-log slope of the per-size best time against the source size.
    Measurements run single-threaded (BLAS pinned to one thread) so the
    slopes reflect arithmetic cost rather than parallel scheduling.
    """
    kinds = [str(k) for k in kinds]
    if not kinds:
        raise InputError("kinds list must not be empty")
    for k in kinds:
        if k not in TIMEABLE_KINDS:
            raise InputError(f"unknown timing kind: {k}")
    ns_grid = list(ns_grid)
    if ns_grid != sorted(ns_grid):
        raise InputError("source-size grid must be sorted ascending")
    if reps < 3:
        raise InputError("at least 3 repetitions are required")
    rng = np.random.default_rng(rng)

    X_all = rng.uniform(0.0, 1.0, (max(ns_grid), input_dim))
    y_all = _smooth_values(X_all, rng)
    X_t = rng.uniform(0.0, 1.0, (nt_fixed, input_dim))
    y_t = _smooth_values(X_t, rng)
    target = TaskDataset(X_t, y_t, 1)

    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        threadpool_limits = lambda _n: contextlib.nullcontext()

    records = []
    best = {k: [] for k in kinds}
    with threadpool_limits(1):
        for n_s in ns_grid:
            source = TaskDataset(X_all[:n_s], y_all[:n_s], 0)
            for kind in kinds:
                step = _make_step(kind, source, target, input_dim)
                _time_once(step)  # warm-up, discarded
                times = [_measure(step) for _ in range(reps)]
                for rep, t in enumerate(times):
                    records.append(
                        TimingRecord(
                            kind=kind,
                            stage="target-train",
                            n_s=1,
                            N_s=n_s,
                            N_t=nt_fixed,
                            rep=rep,
                            ms=t * 1e3,
                        )
                    )
                best[kind].append(min(times))
    slopes = {k: fit_loglog_slope(ns_grid, best[k]) for k in kinds}
    return records, slopes
