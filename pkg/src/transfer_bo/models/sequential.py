"""Sequentially trained hierarchical transfer models: SHGP, BHGP and MHGP.

All three stack the tasks into levels (sources in order, target last) and fit
one level at a time, so target data never touch source hyperparameters.

* SHGP conditions the full hierarchical prior level by level: level n sees a
  Gaussian prior whose mean is the chain posterior mean from below and whose
  covariance is its own kernel plus the chain posterior covariance from
  below. Predictions from this chain coincide with the jointly conditioned
  hierarchical model at equal hyperparameters.
* MHGP transfers only the chain posterior mean; each level is a plain GP on
  the residuals about that mean, and predictive uncertainty comes from the
  target level alone.
* BHGP shares MHGP's mean and training but adds a PSD correction to the
  predictive covariance, built by pushing the lower levels' posterior
  covariance through each level's smoother matrix (recursively, so every
  intermediate level is corrected as well).
"""

from dataclasses import dataclass, field

import numpy as np

from .._linalg import (
    InputError,
    chol_solve,
    chol_with_jitter,
    solve_lower,
    symmetrize,
)
from ..gp import (
    GaussianPrediction,
    KernelHyperparams,
    TaskDataset,
    kernel_eval,
    normalize_targets,
    optimize_hyperparameters,
)
from .coreg import SEQUENTIAL_KINDS, ModelKind

__all__ = [
    "LevelState",
    "SequentialTransferModel",
    "meta_train_sources",
    "fit_target_stage",
    "train_sequential",
    "make_sequential_model",
    "source_chain",
]

DEFAULT_EMPTY_NOISE = 0.01


@dataclass(frozen=True)
class LevelState:
    """One trained level: dataset, effective hyperparameters and factors.

    Hyperparameters are stored in original observation units (the residual
    normalization used during fitting is folded into signal/noise variance
    and the mean shift). `chol` factors the level's own conditioning matrix:
    kernel at the level inputs plus chain covariance from below (SHGP only)
    plus noise.
    """

    dataset: TaskDataset
    hp: KernelHyperparams
    mean_shift: float
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n_points(self):
        return self.dataset.n_points


def _shgp_chain(levels, Xq):
    """Chain posterior mean and covariance at Xq after the given levels.

    Maintains the joint prior over (remaining level inputs, Xq), adds each
    level's kernel, conditions on that level's data, and drops its rows.
    Returns the posterior of the last level's function at Xq; with an empty
    `levels` list this is (0, 0). Blocks among a level's own inputs are never
    evaluated (the stored Cholesky factors cover them), so the first level's
    cost is linear, not quadratic, in its point count.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    active = np.vstack([lv.dataset.inputs for lv in levels] + [Xq])
    mu = np.zeros(active.shape[0])
    C = None  # carried covariance over `active`; None stands for zero
    for lv in levels:
        mu = mu + lv.mean_shift
        n = lv.n_points
        fut = active[n:]
        K_ff = kernel_eval(lv.hp, fut, fut)
        if n == 0:
            C = K_ff if C is None else symmetrize(K_ff + C)
            continue
        K_fo = kernel_eval(lv.hp, fut, active[:n])
        if C is None:
            cross, C_ff = K_fo, K_ff
        else:
            cross = K_fo + C[n:, :n]
            C_ff = K_ff + C[n:, n:]
        mu = mu[n:] + cross @ lv.weights
        V = solve_lower(lv.chol, cross.T)
        C = symmetrize(C_ff - V.T @ V)
        active = fut
    if C is None:
        C = np.zeros((Xq.shape[0], Xq.shape[0]))
    return mu, C


def _chain_mean(levels, X):
    """Stacked residual-fit posterior mean (MHGP/BHGP mean chain) at X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.zeros(X.shape[0])
    for lv in levels:
        mu = mu + lv.mean_shift
        if lv.n_points:
            mu = mu + kernel_eval(lv.hp, X, lv.dataset.inputs) @ lv.weights
    return mu


def _boosted_chain_cov(levels, Xq):
    """Boosted predictive covariance at Xq after the given levels.

    Each level contributes its plain GP posterior covariance plus the lower
    levels' covariance pushed through the level's smoother matrix; the base
    case (nothing below the first level) is zero.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    active = np.vstack([lv.dataset.inputs for lv in levels] + [Xq])
    C = None  # carried covariance over `active`; None stands for zero
    for lv in levels:
        n = lv.n_points
        fut = active[n:]
        K_ff = kernel_eval(lv.hp, fut, fut)
        if n:
            own = active[:n]
            K_fo = kernel_eval(lv.hp, fut, own)
            gain = chol_solve(lv.chol, K_fo.T).T
            plain = K_ff - gain @ K_fo.T
            if C is not None:
                plain = (
                    plain
                    + C[n:, n:]
                    + gain @ C[:n, :n] @ gain.T
                    - gain @ C[:n, n:]
                    - C[n:, :n] @ gain.T
                )
            C = symmetrize(plain)
            active = fut
        else:
            C = K_ff if C is None else symmetrize(K_ff + C)
    if C is None:
        C = np.zeros((Xq.shape[0], Xq.shape[0]))
    return C


def source_chain(kind, source_levels, X):
    """Transferred (mean, covariance) of the source stack at X.

    This is the per-step transfer work of target training: SHGP needs the
    chain mean and covariance, BHGP the chain mean and boosted covariance,
    MHGP the chain mean only (covariance None).
    """
    kind = ModelKind(kind)
    if kind is ModelKind.SHGP:
        return _shgp_chain(source_levels, X)
    if kind is ModelKind.BHGP:
        return _chain_mean(source_levels, X), _boosted_chain_cov(source_levels, X)
    if kind is ModelKind.MHGP:
        return _chain_mean(source_levels, X), None
    raise InputError(f"{kind.value} is not a sequential kind")


def _default_level(dataset, input_dim):
    hp = KernelHyperparams.default(input_dim, noise_variance=DEFAULT_EMPTY_NOISE)
    return LevelState(dataset, hp, 0.0, np.zeros((0, 0)), np.zeros(0))


def _build_level_state(kind, below, dataset, hp, mean_shift):
    """Factorize one level at fixed original-space hyperparameters."""
    if dataset.n_points == 0:
        return LevelState(dataset, hp, mean_shift, np.zeros((0, 0)), np.zeros(0))
    X = dataset.inputs
    K = kernel_eval(hp, X, X)
    if kind is ModelKind.SHGP:
        prev_mean, prev_cov = _shgp_chain(below, X)
        K = K + prev_cov
    else:
        prev_mean = _chain_mean(below, X)
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, _ = chol_with_jitter(K)
    resid = dataset.observations - prev_mean - mean_shift
    weights = chol_solve(L, resid)
    return LevelState(dataset, hp, mean_shift, L, weights)


def _fit_level(kind, below, dataset, rng, n_restarts):
    """Fit one level on residuals about the chain below it.

    Residuals are normalized before fitting; the scale is folded back into
    the stored signal/noise variances and the shift into the chain mean. For
    SHGP the (frozen) chain covariance from below is an additive term of the
    level's likelihood.
    """
    if dataset.n_points == 0:
        return _default_level(dataset, dataset.input_dim)
    X = dataset.inputs
    extra = None
    if kind is ModelKind.SHGP:
        prev_mean, prev_cov = _shgp_chain(below, X)
    else:
        prev_mean = _chain_mean(below, X)
        prev_cov = None
    resid = dataset.observations - prev_mean
    resid_norm, shift, scale = normalize_targets(resid)
    if kind is ModelKind.SHGP and below:
        extra = prev_cov / scale ** 2
    hp_norm = optimize_hyperparameters(
        TaskDataset(X, resid_norm, dataset.task_id),
        n_restarts=n_restarts,
        rng=rng,
        extra_cov=extra,
    )
    hp = hp_norm.scaled(scale ** 2)
    return _build_level_state(kind, below, dataset, hp, shift)


@dataclass(frozen=True)
class SequentialTransferModel:
    """A trained sequential model: source levels plus the target level."""

    kind: ModelKind
    levels: tuple

    @property
    def source_levels(self):
        return self.levels[:-1]

    @property
    def target_level(self):
        return self.levels[-1]

    @property
    def datasets(self):
        return tuple(lv.dataset for lv in self.levels)

    @property
    def task_kernels(self):
        return tuple(lv.hp for lv in self.levels)

    @property
    def target_dataset(self):
        return self.levels[-1].dataset

    @property
    def target_inputs(self):
        return self.levels[-1].dataset.inputs

    @property
    def input_dim(self):
        return self.levels[0].dataset.input_dim

    def predict(self, Xq):
        """Target posterior (mean, full covariance) in original units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.input_dim:
            raise InputError("query dimension mismatch")
        if self.kind is ModelKind.SHGP:
            mean, cov = _shgp_chain(self.levels, Xq)
            return GaussianPrediction(mean, cov)
        mean = _chain_mean(self.levels, Xq)
        if self.kind is ModelKind.BHGP:
            return GaussianPrediction(mean, _boosted_chain_cov(self.levels, Xq))
        tgt = self.target_level
        cov = kernel_eval(tgt.hp, Xq, Xq)
        if tgt.n_points:
            cross = kernel_eval(tgt.hp, Xq, tgt.dataset.inputs)
            V = solve_lower(tgt.chol, cross.T)
            cov = symmetrize(cov - V.T @ V)
        return GaussianPrediction(mean, cov)

    def boost_covariance(self, Xq):
        """Additive covariance correction at the query points (BHGP).

        Built from the lower chain's posterior covariance blocks at target
        and query points and the target smoother matrix; with no target data
        it equals the lower chain's covariance at the queries exactly.
        """
        if self.kind is not ModelKind.BHGP:
            raise InputError("boost covariance is defined for BHGP models")
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        tgt = self.target_level
        below = self.source_levels
        if tgt.n_points == 0:
            return _boosted_chain_cov(below, Xq)
        pts = np.vstack([tgt.dataset.inputs, Xq])
        C = _boosted_chain_cov(below, pts)
        n = tgt.n_points
        cross = kernel_eval(tgt.hp, Xq, tgt.dataset.inputs)
        gain = chol_solve(tgt.chol, cross.T).T
        return (
            C[n:, n:]
            + gain @ C[:n, :n] @ gain.T
            - gain @ C[:n, n:]
            - C[n:, :n] @ gain.T
        )

    def predict_mean_var(self, Xq, chunk=192):
        """Mean and marginal variance, evaluated in query chunks."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        means, variances = [], []
        for lo in range(0, Xq.shape[0], chunk):
            pred = self.predict(Xq[lo : lo + chunk])
            means.append(pred.mean)
            variances.append(pred.variance)
        if not means:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(means), np.concatenate(variances)


def meta_train_sources(kind, sources, rng, n_restarts=10):
    """Train the source stack bottom-up; target data are never consulted."""
    kind = ModelKind(kind)
    if kind not in SEQUENTIAL_KINDS:
        raise InputError(f"{kind.value} is not a sequential kind")
    rng = np.random.default_rng(rng)
    levels = []
    for dataset in sources:
        levels.append(_fit_level(kind, tuple(levels), dataset, rng, n_restarts))
    return tuple(levels)


def fit_target_stage(kind, source_levels, target, rng, n_restarts=10):
    """Fit only the target level on top of frozen source levels."""
    kind = ModelKind(kind)
    rng = np.random.default_rng(rng)
    target_level = _fit_level(kind, tuple(source_levels), target, rng, n_restarts)
    return SequentialTransferModel(kind, tuple(source_levels) + (target_level,))


def train_sequential(kind, sources, target, rng, n_restarts=10):
    """Meta-train the sources, then fit the target stage."""
    sources = tuple(sources)
    if len(sources) < 1:
        raise InputError("at least one source task is required")
    rng = np.random.default_rng(rng)
    levels = meta_train_sources(kind, sources, rng, n_restarts)
    return fit_target_stage(kind, levels, target, rng, n_restarts)


def make_sequential_model(kind, datasets, task_kernels, mean_shifts=None):
    """Assemble a sequential model from explicit original-space
    hyperparameters (no fitting); datasets are ordered sources then target."""
    kind = ModelKind(kind)
    datasets = tuple(datasets)
    task_kernels = tuple(task_kernels)
    if len(datasets) != len(task_kernels):
        raise InputError("need one hyperparameter set per level")
    if mean_shifts is None:
        mean_shifts = (0.0,) * len(datasets)
    levels = []
    for dataset, hp, shift in zip(datasets, task_kernels, mean_shifts):
        levels.append(_build_level_state(kind, tuple(levels), dataset, hp, shift))
    return SequentialTransferModel(kind, tuple(levels))
