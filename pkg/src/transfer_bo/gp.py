"""Single-task Gaussian-process regression.

Squared-exponential ARD kernel, exact conditioning with adaptive jitter,
marginal likelihood with analytic gradients in the unconstrained (softplus)
parameter space, and multi-start L-BFGS-B hyperparameter fitting.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt
from scipy.special import expit

from ._linalg import (
    InputError,
    NumericalError,
    chol_solve,
    chol_with_jitter,
    logdet_from_chol,
    solve_lower,
    symmetrize,
)

__all__ = [
    "KernelHyperparams",
    "TaskDataset",
    "GaussianPrediction",
    "ConditionedGP",
    "kernel_eval",
    "condition",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
    "normalize_targets",
    "denormalize",
    "zero_mean",
    "softplus",
    "softplus_inv",
]

# Box bounds for the optimizer, in constrained space. They exist purely to
# keep exp() and the Cholesky inside floating-point range.
CONSTRAINED_MIN = 1e-6
CONSTRAINED_MAX = 1e3

LOG2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus; y must be positive."""
    y = np.asarray(y, dtype=float)
    # log(expm1(y)): evaluate directly for small y, shift for large y
    small = y < 1.0
    with np.errstate(divide="ignore"):
        out = np.where(
            small,
            np.log(np.expm1(np.minimum(y, 1.0))),
            y + np.log1p(-np.exp(-np.maximum(y, 1.0))),
        )
    return out if out.ndim else float(out)


def softplus_grad(x):
    """d softplus / dx = sigmoid(x)."""
    return expit(x)


def zero_mean(X):
    """Default prior mean function."""
    return np.zeros(X.shape[0])


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


@dataclass(frozen=True)
class KernelHyperparams:
    """SE-ARD kernel and noise hyperparameters, stored in unconstrained space.

    Constrained values are recovered through softplus, so they are strictly
    positive by construction.
    """

    raw_signal_variance: float
    raw_lengthscales: np.ndarray
    raw_noise_variance: float

    def __post_init__(self):
        raw = np.atleast_1d(np.asarray(self.raw_lengthscales, dtype=float)).copy()
        raw.flags.writeable = False
        object.__setattr__(self, "raw_lengthscales", raw)
        object.__setattr__(self, "raw_signal_variance", float(self.raw_signal_variance))
        object.__setattr__(self, "raw_noise_variance", float(self.raw_noise_variance))

    @classmethod
    def from_constrained(cls, signal_variance, lengthscales, noise_variance):
        lengthscales = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if signal_variance <= 0 or noise_variance < 0 or np.any(lengthscales <= 0):
            raise InputError("constrained hyperparameters must be positive")
        # noise exactly zero is representable only in the limit; keep a tiny
        # floor so the softplus round trip stays finite
        noise_variance = max(noise_variance, 1e-300)
        return cls(
            raw_signal_variance=softplus_inv(signal_variance),
            raw_lengthscales=softplus_inv(lengthscales),
            raw_noise_variance=softplus_inv(noise_variance),
        )

    @classmethod
    def default(cls, input_dim, noise_variance=0.01):
        return cls.from_constrained(1.0, np.ones(input_dim), noise_variance)

    @classmethod
    def from_raw_vector(cls, raw, input_dim):
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (input_dim + 2,):
            raise InputError(f"expected raw vector of length {input_dim + 2}")
        return cls(raw[0], raw[1 : input_dim + 1], raw[input_dim + 1])

    def to_raw_vector(self):
        return np.concatenate(
            [[self.raw_signal_variance], self.raw_lengthscales, [self.raw_noise_variance]]
        )

    @property
    def signal_variance(self):
        return float(softplus(self.raw_signal_variance))

    @property
    def lengthscales(self):
        return softplus(self.raw_lengthscales)

    @property
    def noise_variance(self):
        return float(softplus(self.raw_noise_variance))

    @property
    def input_dim(self):
        return self.raw_lengthscales.shape[0]

    def with_noise(self, noise_variance):
        return KernelHyperparams(
            self.raw_signal_variance,
            self.raw_lengthscales,
            softplus_inv(max(noise_variance, 1e-300)),
        )

    def scaled(self, factor):
        """Rescale signal and noise variance by `factor` (lengthscales kept)."""
        return KernelHyperparams.from_constrained(
            self.signal_variance * factor,
            self.lengthscales,
            self.noise_variance * factor,
        )


@dataclass(frozen=True)
class TaskDataset:
    """Inputs and noisy observations of one task."""

    inputs: np.ndarray
    observations: np.ndarray
    task_id: int = 0

    def __post_init__(self):
        X = _as_2d(self.inputs).copy()
        y = np.asarray(self.observations, dtype=float).reshape(-1).copy()
        if X.shape[0] != y.shape[0]:
            raise InputError(
                f"inputs rows ({X.shape[0]}) != observations length ({y.shape[0]})"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains NaN or Inf entries")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "observations", y)
        object.__setattr__(self, "task_id", int(self.task_id))

    @classmethod
    def empty(cls, input_dim, task_id=0):
        return cls(np.zeros((0, input_dim)), np.zeros(0), task_id)

    @property
    def n_points(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def appended(self, x, y):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return TaskDataset(
            np.vstack([self.inputs, x]),
            np.concatenate([self.observations, [float(y)]]),
            self.task_id,
        )


@dataclass(frozen=True)
class GaussianPrediction:
    """Posterior mean and full covariance at a set of query points."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float))

    @property
    def variance(self):
        return np.maximum(np.diag(self.covariance), 0.0)

    @property
    def stddev(self):
        return np.sqrt(self.variance)


def kernel_eval(hp, A, B):
    """SE-ARD kernel matrix between row sets A (N x D) and B (M x D).

    Entry (i, j) = signal_variance * exp(-0.5 * sum_d (A_id - B_jd)^2 / l_d^2).
    Observation noise is never added here.
    """
    A = _as_2d(A)
    B = _as_2d(B)
    ell = hp.lengthscales
    if A.shape[1] != ell.shape[0] or B.shape[1] != ell.shape[0]:
        raise InputError(
            f"input dimension mismatch: A has {A.shape[1]}, B has {B.shape[1]}, "
            f"kernel expects {ell.shape[0]}"
        )
    As = A / ell
    Bs = B / ell
    sq = (
        np.sum(As * As, axis=1)[:, None]
        + np.sum(Bs * Bs, axis=1)[None, :]
        - 2.0 * As @ Bs.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.signal_variance * np.exp(-0.5 * sq)


@dataclass(frozen=True)
class ConditionedGP:
    """A GP conditioned on a dataset; immutable and safe to share.

    Holds the lower Cholesky factor of k(X, X) + noise*I and the weight
    vector (K + noise*I)^{-1} (y - m(X)).
    """

    hp: KernelHyperparams
    data: TaskDataset
    prior_mean: callable = field(repr=False)
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def predict(self, Xq):
        """Full posterior (mean vector, M x M covariance) at query rows Xq."""
        Xq = _as_2d(Xq)
        if Xq.shape[1] != self.hp.input_dim:
            raise InputError(
                f"query dimension {Xq.shape[1]} != training dimension {self.hp.input_dim}"
            )
        prior_cov = kernel_eval(self.hp, Xq, Xq)
        mean = self.prior_mean(Xq)
        if self.data.n_points == 0:
            return GaussianPrediction(mean, prior_cov)
        Kq = kernel_eval(self.hp, Xq, self.data.inputs)
        V = solve_lower(self.chol, Kq.T)
        cov = symmetrize(prior_cov - V.T @ V)
        return GaussianPrediction(mean + Kq @ self.weights, cov)

    def predict_mean_var(self, Xq):
        """Posterior mean and marginal variance only (no M x M matrix)."""
        Xq = _as_2d(Xq)
        if Xq.shape[1] != self.hp.input_dim:
            raise InputError("query dimension mismatch")
        mean = self.prior_mean(Xq)
        var = np.full(Xq.shape[0], self.hp.signal_variance)
        if self.data.n_points == 0:
            return mean, var
        Kq = kernel_eval(self.hp, Xq, self.data.inputs)
        V = solve_lower(self.chol, Kq.T)
        var = np.maximum(var - np.sum(V * V, axis=0), 0.0)
        return mean + Kq @ self.weights, var


def condition(hp, data, prior_mean=zero_mean):
    """Condition a GP prior on a dataset; empty data yields the prior."""
    if data.n_points == 0:
        return ConditionedGP(hp, data, prior_mean, np.zeros((0, 0)), np.zeros(0), 0.0)
    if data.input_dim != hp.input_dim:
        raise InputError("dataset dimension does not match kernel lengthscales")
    K = kernel_eval(hp, data.inputs, data.inputs)
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, jitter = chol_with_jitter(K)
    resid = data.observations - prior_mean(data.inputs)
    weights = chol_solve(L, resid)
    return ConditionedGP(hp, data, prior_mean, L, weights, jitter)


def _sq_dist_per_dim(X, d, ell_d):
    col = X[:, d] / ell_d
    diff = col[:, None] - col[None, :]
    return diff * diff


def log_marginal_likelihood(hp, data, prior_mean=zero_mean, extra_cov=None):
    """Gaussian log evidence and its gradient w.r.t. the raw hyperparameters.

    `extra_cov` is an optional fixed PSD matrix added to the kernel matrix
    (used by the sequential transfer models, where earlier levels contribute
    a frozen covariance). The gradient covers only the kernel and noise
    parameters, chain-ruled through softplus.
    """
    if data.n_points == 0:
        raise InputError("log marginal likelihood requires at least one point")
    X, y = data.inputs, data.observations
    n = data.n_points
    Kse = kernel_eval(hp, X, X)
    K = Kse.copy()
    if extra_cov is not None:
        K += extra_cov
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, _ = chol_with_jitter(K)
    resid = y - prior_mean(X)
    alpha = chol_solve(L, resid)
    lml = -0.5 * float(resid @ alpha) - 0.5 * logdet_from_chol(L) - 0.5 * n * LOG2PI

    Kinv = chol_solve(L, np.eye(n))
    S = np.outer(alpha, alpha) - Kinv

    grad = np.empty(hp.input_dim + 2)
    # signal variance: dK = Kse / sigma_f^2
    grad[0] = 0.5 * float(np.sum(S * Kse)) / hp.signal_variance * softplus_grad(
        hp.raw_signal_variance
    )
    ell = hp.lengthscales
    for d in range(hp.input_dim):
        dK = Kse * _sq_dist_per_dim(X, d, ell[d]) / ell[d]
        grad[1 + d] = 0.5 * float(np.sum(S * dK)) * softplus_grad(hp.raw_lengthscales[d])
    grad[-1] = 0.5 * float(np.trace(S)) * softplus_grad(hp.raw_noise_variance)
    return lml, grad


def optimize_hyperparameters(
    data,
    prior_mean=zero_mean,
    n_restarts=10,
    rng=None,
    extra_cov=None,
    fixed_noise_variance=None,
):
    """Multi-start maximum-likelihood fit of the kernel hyperparameters.

    Each restart draws the raw starting point from a standard normal (so the
    constrained value is softplus of a standard normal) and runs L-BFGS-B in
    the box [softplus_inv(1e-6), softplus_inv(1e3)]. Returns the restart with
    the highest marginal likelihood; the result is never worse than any
    initial guess because the guesses themselves compete.
    """
    if data.n_points < 1:
        raise InputError("hyperparameter optimization requires at least one point")
    if n_restarts < 1:
        raise InputError("n_restarts must be >= 1")
    rng = np.random.default_rng(rng)
    dim = data.input_dim
    n_params = dim + 2
    lo = softplus_inv(CONSTRAINED_MIN)
    hi = softplus_inv(CONSTRAINED_MAX)
    bounds = [(lo, hi)] * n_params

    fixed_raw_noise = (
        None
        if fixed_noise_variance is None
        else float(softplus_inv(max(fixed_noise_variance, CONSTRAINED_MIN)))
    )

    def unpack(raw):
        vec = np.asarray(raw, dtype=float)
        if fixed_raw_noise is not None:
            vec = np.concatenate([vec, [fixed_raw_noise]])
        return KernelHyperparams.from_raw_vector(vec, dim)

    def neg_lml(raw):
        hp = unpack(raw)
        lml, grad = log_marginal_likelihood(hp, data, prior_mean, extra_cov)
        if fixed_raw_noise is not None:
            grad = grad[:-1]
        return -lml, -grad

    n_free = n_params - (1 if fixed_raw_noise is not None else 0)
    candidates = []
    failures = []
    for restart in range(n_restarts):
        x0 = np.clip(rng.standard_normal(n_free), lo, hi)
        try:
            f0, _ = neg_lml(x0)
            candidates.append((f0, restart, x0))
        except NumericalError as err:
            failures.append((restart, "init", str(err)))
            continue
        try:
            res = sopt.minimize(
                neg_lml,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds[:n_free],
            )
            if np.isfinite(res.fun):
                candidates.append((float(res.fun), restart, res.x))
        except NumericalError as err:
            failures.append((restart, "optimize", str(err)))
    if not candidates:
        raise NumericalError(
            "all hyperparameter restarts failed: "
            + "; ".join(f"restart {r} ({stage}): {msg}" for r, stage, msg in failures)
        )
    best = min(candidates, key=lambda c: (c[0], c[1]))
    return unpack(best[2])


def normalize_targets(y):
    """Shift to zero mean and scale to unit std; degenerate std passes through.

    Returns (normalized, mean, std) with std forced to 1 when the empirical
    std is below 1e-12, so constant observations map to zeros.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] < 1:
        raise InputError("normalize_targets requires at least one value")
    mean = float(np.mean(y))
    std = float(np.std(y))
    if std <= 1e-12:
        std = 1.0
    return (y - mean) / std, mean, std


def denormalize(y_norm, mean, std):
    return np.asarray(y_norm, dtype=float) * std + mean
