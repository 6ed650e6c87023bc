"""Jointly trained transfer models: MTGP, MTKGP and HGP.

All hyperparameters (per-task kernels, noises and any learned task-weight
matrices) are fitted together by maximizing the marginal likelihood of the
stacked source-plus-target dataset. WSGP shares this interface but lives in
wsgp.py because its linear algebra is blocked.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt

from .._linalg import (
    InputError,
    NumericalError,
    chol_solve,
    chol_with_jitter,
    logdet_from_chol,
    solve_lower,
    symmetrize,
)
from ..gp import (
    CONSTRAINED_MAX,
    CONSTRAINED_MIN,
    GaussianPrediction,
    KernelHyperparams,
    LOG2PI,
    kernel_eval,
    normalize_targets,
    softplus,
    softplus_grad,
    softplus_inv,
)
from .coreg import COREG_RANK, CoregionalizationSpec, ModelKind

__all__ = ["JointTransferModel", "train_joint_dense", "make_joint_model", "JointLikelihood"]

RAW_LO = softplus_inv(CONSTRAINED_MIN)
RAW_HI = softplus_inv(CONSTRAINED_MAX)
FACTOR_BOUND = 30.0


def _stack(datasets):
    X_all = np.vstack([d.inputs for d in datasets])
    y_all = np.concatenate([d.observations for d in datasets])
    task_idx = np.concatenate(
        [np.full(d.n_points, t, dtype=int) for t, d in enumerate(datasets)]
    )
    offsets = np.cumsum([0] + [d.n_points for d in datasets])
    return X_all, y_all, task_idx, offsets


def _ard_quadratic_sums(T, Xs):
    """sum_ij T_ij (x_id - x_jd)^2 for every dimension d, via one GEMM.

    Expands the square so no per-dimension distance matrix is formed:
    sum T_ij x_i^2 + sum T_ij x_j^2 - 2 x^T T x per column of Xs.
    """
    rowsum = T.sum(axis=1)
    colsum = T.sum(axis=0)
    R = T @ Xs
    sq = Xs * Xs
    return rowsum @ sq + colsum @ sq - 2.0 * np.sum(Xs * R, axis=0)


class JointLikelihood:
    """Marginal likelihood of a stacked multi-task kernel, with gradients.

    The parameter vector covers, in order: per-kernel raw (signal, length-
    scales), per-task raw noise, and for the learned-coregionalization kinds
    the factor entries and raw diagonals of every weight matrix. Entries whose
    kernel-matrix derivative vanishes on the training data (for instance the
    target kernel when no target point exists) are frozen at defaults and
    excluded from the vector.
    """

    def __init__(self, kind, datasets, input_dim):
        self.kind = ModelKind(kind)
        if self.kind not in (ModelKind.MTGP, ModelKind.MTKGP, ModelKind.HGP):
            raise InputError(f"dense joint likelihood does not handle {self.kind.value}")
        self.datasets = tuple(datasets)
        self.n_tasks = len(self.datasets)
        self.input_dim = input_dim
        self.X, self.y, self.task_idx, self.offsets = _stack(self.datasets)
        self.n_points = self.X.shape[0]
        if self.n_points == 0:
            raise InputError("joint training needs at least one observation")
        self.nonempty = np.array([d.n_points > 0 for d in self.datasets])
        self.n_kernels = 1 if self.kind is ModelKind.MTKGP else self.n_tasks

        # the hierarchical pattern restricts kernel nu to tasks >= nu, which
        # in stacked order is a trailing slice; the learned kinds span all
        if self.kind is ModelKind.HGP:
            self._starts = [self.offsets[nu] for nu in range(self.n_kernels)]
            self._hgp_weights = CoregionalizationSpec.create(
                "HGP", self.n_tasks
            ).weight_matrices
        else:
            self._starts = [0] * self.n_kernels
            self._hgp_weights = None
        # observation noise is i.i.d. per observation, so it enters the
        # training matrix on the diagonal of each task's rows only
        self._noise_diag = [
            np.arange(self.offsets[t], self.offsets[t + 1]) for t in range(self.n_tasks)
        ]

        self._build_layout()

    # -- parameter layout -------------------------------------------------
    def _kernel_trainable(self, nu):
        if self.kind is ModelKind.HGP:
            return bool(np.any(self.nonempty[nu:]))
        return True

    def _build_layout(self):
        dim = self.input_dim
        entries = []  # (group, index-tuple, default_raw, lo, hi)
        for nu in range(self.n_kernels):
            default = KernelHyperparams.default(dim).to_raw_vector()[: dim + 1]
            trainable = self._kernel_trainable(nu)
            for p in range(dim + 1):
                entries.append(("kernel", (nu, p), default[p], RAW_LO, RAW_HI, trainable))
        noise_default = float(softplus_inv(0.01))
        for t in range(self.n_tasks):
            entries.append(
                ("noise", (t,), noise_default, RAW_LO, RAW_HI, bool(self.nonempty[t]))
            )
        if self.kind in (ModelKind.MTGP, ModelKind.MTKGP):
            for nu in range(self.n_kernels):
                for a in range(self.n_tasks):
                    for r in range(COREG_RANK):
                        entries.append(
                            (
                                "factor",
                                (nu, a, r),
                                0.0,
                                -FACTOR_BOUND,
                                FACTOR_BOUND,
                                bool(self.nonempty[a]),
                            )
                        )
                for a in range(self.n_tasks):
                    entries.append(
                        (
                            "diag",
                            (nu, a),
                            float(softplus_inv(1.0)),
                            RAW_LO,
                            RAW_HI,
                            bool(self.nonempty[a]),
                        )
                    )
        self._entries = entries
        self._free = [i for i, e in enumerate(entries) if e[5]]
        self.n_free = len(self._free)
        self.bounds = [(entries[i][3], entries[i][4]) for i in self._free]

    def full_raw(self, raw_free):
        full = np.array([e[2] for e in self._entries])
        full[self._free] = raw_free
        return full

    def default_free(self):
        return np.array([self._entries[i][2] for i in self._free])

    def unpack(self, raw_free):
        """Raw free vector -> (kernel raws, noise raws, factors, diag raws)."""
        full = self.full_raw(raw_free)
        dim = self.input_dim
        pos = 0
        kernels = []
        for _ in range(self.n_kernels):
            kernels.append(full[pos : pos + dim + 1])
            pos += dim + 1
        noises = full[pos : pos + self.n_tasks]
        pos += self.n_tasks
        factors, diag_raws = [], []
        if self.kind in (ModelKind.MTGP, ModelKind.MTKGP):
            for _ in range(self.n_kernels):
                factors.append(
                    full[pos : pos + self.n_tasks * COREG_RANK].reshape(
                        self.n_tasks, COREG_RANK
                    )
                )
                pos += self.n_tasks * COREG_RANK
                diag_raws.append(full[pos : pos + self.n_tasks])
                pos += self.n_tasks
        return kernels, noises, factors, diag_raws

    def weight_matrices(self, factors, diag_raws):
        if self.kind is ModelKind.HGP:
            return self._hgp_weights
        return [
            f @ f.T + np.diag(softplus(d_raw)) for f, d_raw in zip(factors, diag_raws)
        ]

    def spec_and_kernels(self, raw_free):
        """Materialize the trained spec and per-task hyperparameters."""
        kernels, noises, factors, diag_raws = self.unpack(raw_free)
        dim = self.input_dim
        if self.kind is ModelKind.HGP:
            spec = CoregionalizationSpec.create("HGP", self.n_tasks)
        else:
            spec = CoregionalizationSpec.create(
                self.kind,
                self.n_tasks,
                factors=factors,
                diags=[softplus(d) for d in diag_raws],
            )
        task_kernels = []
        for t in range(self.n_tasks):
            kern = kernels[0] if self.kind is ModelKind.MTKGP else kernels[t]
            task_kernels.append(
                KernelHyperparams(kern[0], kern[1 : dim + 1], noises[t])
            )
        return spec, tuple(task_kernels)

    # -- likelihood -------------------------------------------------------
    def _base_matrices(self, kernel_raws):
        """Per-kernel (signal, lengthscales, kernel matrix over its subset)."""
        mats = []
        for nu, raw in enumerate(kernel_raws):
            sig = float(softplus(raw[0]))
            ell = softplus(raw[1:])
            Xs = self.X[self._starts[nu] :]
            hp = KernelHyperparams(raw[0], raw[1 : self.input_dim + 1], 0.0)
            mats.append((sig, ell, kernel_eval(hp, Xs, Xs)))
        return mats

    def _assemble(self, kernels, noises, factors, diag_raws):
        Ws = self.weight_matrices(factors, diag_raws)
        base = self._base_matrices(kernels)
        n = self.n_points
        K = np.zeros((n, n))
        Wexp = []
        for nu, (W, (_, _, Kmat)) in enumerate(zip(Ws, base)):
            if self.kind is ModelKind.HGP:
                start = self._starts[nu]
                K[start:, start:] += Kmat
                Wexp.append(None)
            else:
                We = W[np.ix_(self.task_idx, self.task_idx)]
                Wexp.append(We)
                K += We * Kmat
        for t in range(self.n_tasks):
            diag = self._noise_diag[t]
            K[diag, diag] += float(softplus(noises[t]))
        return K, Wexp, base

    def kernel_matrix(self, raw_free):
        kernels, noises, factors, diag_raws = self.unpack(raw_free)
        K, _, _ = self._assemble(kernels, noises, factors, diag_raws)
        return K

    def value_and_grad(self, raw_free):
        kernels, noises, factors, diag_raws = self.unpack(raw_free)
        K, Wexp, base = self._assemble(kernels, noises, factors, diag_raws)
        n = self.n_points

        L, _ = chol_with_jitter(K)
        alpha = chol_solve(L, self.y)
        lml = (
            -0.5 * float(self.y @ alpha)
            - 0.5 * logdet_from_chol(L)
            - 0.5 * n * LOG2PI
        )
        Kinv = chol_solve(L, np.eye(n))
        S = np.outer(alpha, alpha) - Kinv

        grads = {}
        for nu, (sig, ell, Kmat) in enumerate(base):
            start = self._starts[nu]
            Xs = self.X[start:]
            SW = S[start:, start:] if Wexp[nu] is None else S * Wexp[nu]
            grads[("kernel", (nu, 0))] = (
                0.5 * float(np.vdot(SW, Kmat)) / sig * softplus_grad(kernels[nu][0])
            )
            T = SW * Kmat
            quad = _ard_quadratic_sums(T, Xs)
            for d in range(self.input_dim):
                grads[("kernel", (nu, 1 + d))] = (
                    0.5 * quad[d] / ell[d] ** 3 * softplus_grad(kernels[nu][1 + d])
                )
        for t in range(self.n_tasks):
            diag = self._noise_diag[t]
            grads[("noise", (t,))] = (
                0.5 * float(np.sum(S[diag, diag])) * softplus_grad(noises[t])
            )
        if self.kind in (ModelKind.MTGP, ModelKind.MTKGP):
            # task-block sums of S * K_nu give every weight-matrix derivative
            for nu, (_, _, Kmat) in enumerate(base):
                SK = S * Kmat
                blocks = np.zeros((self.n_tasks, self.n_tasks))
                for a in range(self.n_tasks):
                    la, ha = self.offsets[a], self.offsets[a + 1]
                    for b in range(self.n_tasks):
                        lb, hb = self.offsets[b], self.offsets[b + 1]
                        blocks[a, b] = float(np.sum(SK[la:ha, lb:hb]))
                fac = factors[nu]
                for a in range(self.n_tasks):
                    for r in range(COREG_RANK):
                        grads[("factor", (nu, a, r))] = float(blocks[a] @ fac[:, r])
                    grads[("diag", (nu, a))] = (
                        0.5 * blocks[a, a] * softplus_grad(diag_raws[nu][a])
                    )

        grad_free = np.array(
            [grads.get((e[0], e[1]), 0.0) for e in self._entries if e[5]]
        )
        return lml, grad_free


@dataclass(frozen=True)
class JointTransferModel:
    """A trained joint model plus its cached factorization (normalized space)."""

    kind: ModelKind
    datasets: tuple
    task_kernels: tuple
    spec: CoregionalizationSpec
    y_shift: float
    y_scale: float
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    X_all: np.ndarray = field(repr=False)
    task_idx: np.ndarray = field(repr=False)

    @property
    def target_dataset(self):
        return self.datasets[-1]

    @property
    def target_inputs(self):
        return self.datasets[-1].inputs

    @property
    def input_dim(self):
        return self.datasets[0].input_dim

    def _kernel(self, nu):
        if self.kind is ModelKind.MTKGP:
            return self.task_kernels[0]
        return self.task_kernels[nu]

    def _cross_and_prior(self, Xq, full_prior):
        tgt = self.spec.n_tasks - 1
        cross = np.zeros((Xq.shape[0], self.X_all.shape[0]))
        for nu, W in enumerate(self.spec.weight_matrices):
            col_w = W[tgt, self.task_idx]
            if np.any(col_w != 0.0):
                cross += kernel_eval(self._kernel(nu), Xq, self.X_all) * col_w[None, :]
        if full_prior:
            prior = np.zeros((Xq.shape[0], Xq.shape[0]))
        else:
            prior = np.zeros(Xq.shape[0])
        for nu, W in enumerate(self.spec.weight_matrices):
            w = W[tgt, tgt]
            if w != 0.0:
                if full_prior:
                    prior += w * kernel_eval(self._kernel(nu), Xq, Xq)
                else:
                    prior += w * self._kernel(nu).signal_variance
        return cross, prior

    def predict(self, Xq):
        """Target-task posterior (original units) with full covariance."""
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[:, None]
        if Xq.shape[1] != self.input_dim:
            raise InputError("query dimension mismatch")
        cross, prior = self._cross_and_prior(Xq, full_prior=True)
        mean = cross @ self.weights if self.weights.size else np.zeros(Xq.shape[0])
        if self.chol.shape[0]:
            V = solve_lower(self.chol, cross.T)
            cov = symmetrize(prior - V.T @ V)
        else:
            cov = prior
        return GaussianPrediction(
            mean * self.y_scale + self.y_shift, cov * self.y_scale ** 2
        )

    def predict_mean_var(self, Xq):
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[:, None]
        cross, prior = self._cross_and_prior(Xq, full_prior=False)
        mean = cross @ self.weights if self.weights.size else np.zeros(Xq.shape[0])
        var = prior
        if self.chol.shape[0]:
            V = solve_lower(self.chol, cross.T)
            var = np.maximum(prior - np.sum(V * V, axis=0), 0.0)
        return mean * self.y_scale + self.y_shift, var * self.y_scale ** 2


def _factorize(kind, datasets, task_kernels, spec, y_shift, y_scale):
    X_all, y_all, task_idx, offsets = _stack(datasets)
    n = X_all.shape[0]
    K = np.zeros((n, n))
    for nu, W in enumerate(spec.weight_matrices):
        kern = task_kernels[0] if kind is ModelKind.MTKGP else task_kernels[nu]
        K += W[np.ix_(task_idx, task_idx)] * kernel_eval(kern, X_all, X_all)
    for t in range(len(datasets)):
        diag = np.arange(offsets[t], offsets[t + 1])
        K[diag, diag] += task_kernels[t].noise_variance
    if n:
        L, _ = chol_with_jitter(K)
        y_norm = (y_all - y_shift) / y_scale
        weights = chol_solve(L, y_norm)
    else:
        L, weights = np.zeros((0, 0)), np.zeros(0)
    return JointTransferModel(
        kind=kind,
        datasets=tuple(datasets),
        task_kernels=tuple(task_kernels),
        spec=spec,
        y_shift=y_shift,
        y_scale=y_scale,
        chol=L,
        weights=weights,
        X_all=X_all,
        task_idx=task_idx,
    )


def make_joint_model(
    kind, datasets, task_kernels, source_weights=None, factors=None, diags=None,
    y_shift=0.0, y_scale=1.0,
):
    """Assemble a joint model from explicit hyperparameters (no fitting)."""
    kind = ModelKind(kind)
    spec = CoregionalizationSpec.create(
        kind,
        len(datasets),
        source_weights=source_weights,
        factors=factors,
        diags=diags,
    )
    return _factorize(kind, tuple(datasets), tuple(task_kernels), spec, y_shift, y_scale)


def train_joint_dense(kind, sources, target, rng, n_restarts=10):
    """Multistart joint maximum-likelihood training for MTGP/MTKGP/HGP."""
    kind = ModelKind(kind)
    sources = tuple(sources)
    if len(sources) < 1:
        raise InputError("at least one source task is required")
    datasets = sources + (target,)
    dim = datasets[0].input_dim
    for d in datasets:
        if d.input_dim != dim:
            raise InputError("all tasks must share the input dimension")
    rng = np.random.default_rng(rng)

    y_all = np.concatenate([d.observations for d in datasets])
    _, y_shift, y_scale = normalize_targets(y_all)
    norm_datasets = tuple(
        type(d)(d.inputs, (d.observations - y_shift) / y_scale, d.task_id)
        for d in datasets
    )
    lik = JointLikelihood(kind, norm_datasets, dim)

    def neg(raw):
        lml, grad = lik.value_and_grad(raw)
        return -lml, -grad

    candidates, failures = [], []
    for restart in range(n_restarts):
        x0 = np.clip(
            rng.standard_normal(lik.n_free),
            [b[0] for b in lik.bounds],
            [b[1] for b in lik.bounds],
        )
        try:
            f0, _ = neg(x0)
            candidates.append((f0, restart, x0))
            res = sopt.minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=lik.bounds)
            if np.isfinite(res.fun):
                candidates.append((float(res.fun), restart, res.x))
        except NumericalError as err:
            failures.append(f"restart {restart}: {err}")
    if not candidates:
        raise NumericalError(
            "joint training failed on all restarts: " + "; ".join(failures)
        )
    best = min(candidates, key=lambda c: (c[0], c[1]))
    spec, task_kernels = lik.spec_and_kernels(best[2])
    return _factorize(kind, datasets, task_kernels, spec, y_shift, y_scale)
