"""Weighted-source transfer model with blocked linear algebra.

The kernel couples each source to the target through a nonnegative weight
while keeping different sources uncorrelated, so the training matrix has a
block-arrow shape: per-source diagonal blocks, a target column, and a target
block. Solves and determinants go through per-source Cholesky factors plus
the target Schur complement; the dense inverse of the source part is never
formed as one matrix.
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
    symmetrize,
)
from ..gp import (
    GaussianPrediction,
    KernelHyperparams,
    LOG2PI,
    kernel_eval,
    normalize_targets,
    softplus,
    softplus_grad,
    softplus_inv,
)
from .coreg import CoregionalizationSpec, ModelKind
from .joint import RAW_HI, RAW_LO

__all__ = ["BlockedInverse", "block_inverse_wsgp", "WSGPModel", "train_wsgp", "make_wsgp_model"]


@dataclass(frozen=True)
class BlockedInverse:
    """Applies K^{-1} for a block-arrow matrix [[A, B], [B^T, D]].

    A is block diagonal (one block per source); the Schur complement
    D - B^T A^{-1} B is factorized densely at target size only.
    """

    chols: tuple  # per-source lower Cholesky factors of A blocks
    b_blocks: tuple  # per-source B rows
    gains: tuple  # per-source A^{-1} B
    schur_chol: np.ndarray
    sizes: tuple
    n_target: int

    @property
    def n_total(self):
        return sum(self.sizes) + self.n_target

    def split(self, v):
        parts = []
        pos = 0
        for n in self.sizes:
            parts.append(v[pos : pos + n])
            pos += n
        return parts, v[pos:]

    def solve(self, v):
        """K^{-1} v for a vector or matrix right-hand side."""
        v = np.asarray(v, dtype=float)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[:, None]
        if v.shape[0] != self.n_total:
            raise InputError("right-hand side size mismatch")
        v_src, v_tgt = self.split(v)
        u = [chol_solve(L, vs) for L, vs in zip(self.chols, v_src)]
        rhs_t = v_tgt - sum(
            (B.T @ us for B, us in zip(self.b_blocks, u)),
            start=np.zeros_like(v_tgt),
        )
        x_t = chol_solve(self.schur_chol, rhs_t)
        out = [us - G @ x_t for us, G in zip(u, self.gains)]
        out.append(x_t)
        x = np.vstack(out) if out else x_t
        return x[:, 0] if squeeze else x

    def logdet(self):
        total = sum(logdet_from_chol(L) for L in self.chols)
        return total + logdet_from_chol(self.schur_chol)


def block_inverse_wsgp(A_blocks, B, D, counter=None):
    """Blocked inverse operator from raw blocks.

    A_blocks are the per-source diagonal blocks, B the stacked source-target
    coupling (rows ordered like the A blocks), D the target block. A singular
    Schur complement surfaces as NumericalError.
    """
    A_blocks = [np.asarray(A, dtype=float) for A in A_blocks]
    B = np.asarray(B, dtype=float)
    D = np.asarray(D, dtype=float)
    sizes = tuple(A.shape[0] for A in A_blocks)
    if B.shape != (sum(sizes), D.shape[0]) or D.shape[0] != D.shape[1]:
        raise InputError("inconsistent block sizes")
    chols = []
    gains = []
    b_blocks = []
    schur = D.copy()
    pos = 0
    for A in A_blocks:
        n = A.shape[0]
        L, _ = chol_with_jitter(A, counter)
        Bn = B[pos : pos + n]
        G = chol_solve(L, Bn, counter)
        if counter is not None and D.shape[0]:
            counter.add_matmul(n, n, D.shape[0])  # dominated cost of A^{-1}B
            counter.add_matmul(D.shape[0], n, D.shape[0])
        schur -= Bn.T @ G
        chols.append(L)
        gains.append(G)
        b_blocks.append(Bn)
        pos += n
    schur_chol, _ = chol_with_jitter(symmetrize(schur), counter)
    return BlockedInverse(
        chols=tuple(chols),
        b_blocks=tuple(b_blocks),
        gains=tuple(gains),
        schur_chol=schur_chol,
        sizes=sizes,
        n_target=D.shape[0],
    )


class _WSGPLikelihood:
    """Blocked marginal likelihood of the weighted-source kernel."""

    def __init__(self, datasets, input_dim):
        self.datasets = tuple(datasets)
        self.n_tasks = len(self.datasets)
        self.n_sources = self.n_tasks - 1
        self.dim = input_dim
        self.X_t = self.datasets[-1].inputs
        self.n_t = self.X_t.shape[0]
        self.y = np.concatenate([d.observations for d in self.datasets])
        self.nonempty = [d.n_points > 0 for d in self.datasets]
        if self.y.size == 0:
            raise InputError("joint training needs at least one observation")

        def sqdiffs(A, B):
            return [
                (A[:, d][:, None] - B[:, d][None, :]) ** 2 for d in range(input_dim)
            ]

        self._sq_ss = [sqdiffs(d.inputs, d.inputs) for d in self.datasets[:-1]]
        self._sq_st = [sqdiffs(d.inputs, self.X_t) for d in self.datasets[:-1]]
        self._sq_tt = sqdiffs(self.X_t, self.X_t)
        self._build_layout()

    def _build_layout(self):
        entries = []
        default_kernel = KernelHyperparams.default(self.dim).to_raw_vector()[: self.dim + 1]
        noise_default = float(softplus_inv(0.01))
        weight_default = float(softplus_inv(0.5))
        any_target = self.nonempty[-1]
        for nu in range(self.n_sources):
            trainable = self.nonempty[nu] or any_target
            for p in range(self.dim + 1):
                entries.append(("kernel", (nu, p), default_kernel[p], trainable))
        for p in range(self.dim + 1):
            entries.append(("kernel", (self.n_sources, p), default_kernel[p], any_target))
        for t in range(self.n_tasks):
            entries.append(("noise", (t,), noise_default, self.nonempty[t]))
        for nu in range(self.n_sources):
            entries.append(
                ("weight", (nu,), weight_default, self.nonempty[nu] or any_target)
            )
        self._entries = entries
        self._free = [i for i, e in enumerate(entries) if e[3]]
        self.n_free = len(self._free)
        self.bounds = [(RAW_LO, RAW_HI)] * self.n_free

    def default_free(self):
        return np.array([self._entries[i][2] for i in self._free])

    def full_raw(self, raw_free):
        full = np.array([e[2] for e in self._entries])
        full[self._free] = raw_free
        return full

    def unpack_full(self, full):
        pos = 0
        kernels = []
        for _ in range(self.n_tasks):
            kernels.append(full[pos : pos + self.dim + 1])
            pos += self.dim + 1
        noises = full[pos : pos + self.n_tasks]
        pos += self.n_tasks
        weights = full[pos : pos + self.n_sources]
        return kernels, noises, weights

    def unpack(self, raw_free):
        return self.unpack_full(self.full_raw(raw_free))

    def hyperparams(self, raw_free):
        kernels, noises, weights = self.unpack(raw_free)
        task_kernels = tuple(
            KernelHyperparams(k[0], k[1 : self.dim + 1], nz)
            for k, nz in zip(kernels, noises)
        )
        return task_kernels, softplus(weights)

    @staticmethod
    def _base(raw_kernel, sqdiffs):
        sig = float(softplus(raw_kernel[0]))
        ell = softplus(raw_kernel[1:])
        if not sqdiffs:
            return sig, ell, np.zeros((0, 0)), np.zeros((0, 0))
        sq = sum(sq_d / (ell[d] ** 2) for d, sq_d in enumerate(sqdiffs))
        E = np.exp(-0.5 * sq)
        return sig, ell, E, sig * E

    def _assemble_from_full(self, full):
        kernels, noises, raw_weights = self.unpack_full(full)
        w = softplus(raw_weights)
        noise_vals = softplus(noises)
        src = []
        for nu in range(self.n_sources):
            ss = self._base(kernels[nu], self._sq_ss[nu])
            st = self._base(kernels[nu], self._sq_st[nu])
            tt = self._base(kernels[nu], self._sq_tt) if self.n_t else (ss[0], ss[1], np.zeros((0, 0)), np.zeros((0, 0)))
            src.append((ss, st, tt))
        tgt_tt = self._base(kernels[-1], self._sq_tt)

        def add_noise(mat, task):
            # i.i.d. per-observation noise on the task's diagonal
            mat[np.diag_indices_from(mat)] += noise_vals[task]

        A_blocks, B_rows = [], []
        D = tgt_tt[3].copy() if self.n_t else np.zeros((0, 0))
        for nu in range(self.n_sources):
            ss, st, tt = src[nu]
            A = ((1.0 + w[nu]) * ss[3]).copy()
            add_noise(A, nu)
            A_blocks.append(A)
            B_rows.append(w[nu] * st[3])
            if self.n_t:
                D += w[nu] * tt[3]
        if self.n_t:
            add_noise(D, self.n_tasks - 1)
        B = np.vstack(B_rows) if B_rows else np.zeros((0, self.n_t))
        return kernels, noises, raw_weights, w, src, tgt_tt, A_blocks, B, D

    def value_and_grad(self, raw_free):
        (kernels, noises, raw_weights, w, src, tgt_tt, A_blocks, B, D) = (
            self._assemble_from_full(self.full_raw(raw_free))
        )
        op = block_inverse_wsgp(A_blocks, B, D)
        alpha = op.solve(self.y)
        lml = -0.5 * float(self.y @ alpha) - 0.5 * op.logdet() - 0.5 * self.y.size * LOG2PI

        # K^{-1} pieces needed for the traces, all at per-source size
        a_src, a_tgt = op.split(alpha[:, None])
        a_src = [a[:, 0] for a in a_src]
        a_tgt = a_tgt[:, 0]
        Sinv = chol_solve(op.schur_chol, np.eye(self.n_t)) if self.n_t else np.zeros((0, 0))
        UL = []
        UR = []
        for L, G in zip(op.chols, op.gains):
            Ainv = chol_solve(L, np.eye(L.shape[0])) if L.shape[0] else np.zeros((0, 0))
            H = Sinv @ G.T if self.n_t else np.zeros((0, L.shape[0]))
            UL.append(Ainv + G @ H)
            UR.append(-H.T)

        def block_derivative_trace_quad(nu, dA, dB, dD):
            tr = 0.0
            quad = 0.0
            if dA is not None and dA.size:
                tr += float(np.sum(UL[nu] * dA))
                quad += float(a_src[nu] @ dA @ a_src[nu])
            if dB is not None and dB.size:
                tr += 2.0 * float(np.sum(UR[nu] * dB))
                quad += 2.0 * float(a_src[nu] @ dB @ a_tgt)
            if dD is not None and dD.size:
                tr += float(np.sum(Sinv * dD))
                quad += float(a_tgt @ dD @ a_tgt)
            return 0.5 * (quad - tr)

        grads = {}
        for nu in range(self.n_sources):
            ss, st, tt = src[nu]
            sig, ell = ss[0], ss[1]
            # signal variance
            grads[("kernel", (nu, 0))] = block_derivative_trace_quad(
                nu,
                (1.0 + w[nu]) * ss[2],
                w[nu] * st[2],
                w[nu] * tt[2] if self.n_t else None,
            ) * softplus_grad(kernels[nu][0])
            for d in range(self.dim):
                scale = 1.0 / ell[d] ** 3
                dA = (1.0 + w[nu]) * ss[3] * self._sq_ss[nu][d] * scale if ss[3].size else ss[3]
                dB = w[nu] * st[3] * self._sq_st[nu][d] * scale if st[3].size else st[3]
                dD = w[nu] * tt[3] * self._sq_tt[d] * scale if self.n_t else None
                grads[("kernel", (nu, 1 + d))] = block_derivative_trace_quad(
                    nu, dA, dB, dD
                ) * softplus_grad(kernels[nu][1 + d])
            grads[("weight", (nu,))] = block_derivative_trace_quad(
                nu, ss[3], st[3], tt[3] if self.n_t else None
            ) * softplus_grad(raw_weights[nu])
            # source noise
            tr = float(np.trace(UL[nu]))
            quad = float(a_src[nu] @ a_src[nu])
            grads[("noise", (nu,))] = 0.5 * (quad - tr) * softplus_grad(noises[nu])
        if self.n_t:
            grads[("kernel", (self.n_sources, 0))] = block_derivative_trace_quad(
                0, None, None, tgt_tt[2]
            ) * softplus_grad(kernels[-1][0])
            for d in range(self.dim):
                dD = tgt_tt[3] * self._sq_tt[d] / tgt_tt[1][d] ** 3
                grads[("kernel", (self.n_sources, 1 + d))] = block_derivative_trace_quad(
                    0, None, None, dD
                ) * softplus_grad(kernels[-1][1 + d])
            tr = float(np.trace(Sinv))
            quad = float(a_tgt @ a_tgt)
            grads[("noise", (self.n_tasks - 1,))] = 0.5 * (quad - tr) * softplus_grad(
                noises[-1]
            )

        grad_free = np.array(
            [grads.get((e[0], e[1]), 0.0) for e in self._entries if e[3]]
        )
        return lml, grad_free


@dataclass(frozen=True)
class WSGPModel:
    """Trained weighted-source model with cached blocked factorization."""

    kind: ModelKind
    datasets: tuple
    task_kernels: tuple
    source_weights: np.ndarray
    y_shift: float
    y_scale: float
    op: BlockedInverse = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def spec(self):
        return CoregionalizationSpec.create(
            "WSGP", len(self.datasets), source_weights=self.source_weights
        )

    @property
    def target_dataset(self):
        return self.datasets[-1]

    @property
    def target_inputs(self):
        return self.datasets[-1].inputs

    @property
    def input_dim(self):
        return self.datasets[0].input_dim

    def _cross(self, Xq):
        cols = []
        for nu, d in enumerate(self.datasets[:-1]):
            cols.append(
                self.source_weights[nu] * kernel_eval(self.task_kernels[nu], Xq, d.inputs)
            )
        X_t = self.datasets[-1].inputs
        tgt = kernel_eval(self.task_kernels[-1], Xq, X_t)
        for nu in range(len(self.datasets) - 1):
            tgt += self.source_weights[nu] * kernel_eval(
                self.task_kernels[nu], Xq, X_t
            )
        cols.append(tgt)
        return np.hstack(cols)

    def _prior(self, Xq, full):
        if full:
            prior = kernel_eval(self.task_kernels[-1], Xq, Xq)
            for nu in range(len(self.datasets) - 1):
                prior += self.source_weights[nu] * kernel_eval(
                    self.task_kernels[nu], Xq, Xq
                )
            return prior
        total = self.task_kernels[-1].signal_variance
        for nu in range(len(self.datasets) - 1):
            total += self.source_weights[nu] * self.task_kernels[nu].signal_variance
        return np.full(Xq.shape[0], total)

    def predict(self, Xq):
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[:, None]
        if Xq.shape[1] != self.input_dim:
            raise InputError("query dimension mismatch")
        C = self._cross(Xq)
        mean = C @ self.alpha if self.alpha.size else np.zeros(Xq.shape[0])
        prior = self._prior(Xq, full=True)
        if self.op.n_total:
            cov = symmetrize(prior - C @ self.op.solve(C.T))
        else:
            cov = prior
        return GaussianPrediction(
            mean * self.y_scale + self.y_shift, cov * self.y_scale ** 2
        )

    def predict_mean_var(self, Xq):
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[:, None]
        C = self._cross(Xq)
        mean = C @ self.alpha if self.alpha.size else np.zeros(Xq.shape[0])
        var = self._prior(Xq, full=False)
        if self.op.n_total:
            var = np.maximum(var - np.sum(C * self.op.solve(C.T).T, axis=1), 0.0)
        return mean * self.y_scale + self.y_shift, var * self.y_scale ** 2


def _factorize_wsgp(datasets, task_kernels, source_weights, y_shift, y_scale):
    lik = _WSGPLikelihood(datasets, datasets[0].input_dim)
    raw_weights = softplus_inv(np.maximum(source_weights, 1e-300))
    raw = []
    for hp in task_kernels:
        raw.extend([hp.raw_signal_variance, *hp.raw_lengthscales])
    raw.extend([hp.raw_noise_variance for hp in task_kernels])
    raw.extend(np.atleast_1d(raw_weights))
    full = np.asarray(raw, dtype=float)
    *_, A_blocks, B, D = lik._assemble_from_full(full)
    op = block_inverse_wsgp(A_blocks, B, D)
    y_norm = (lik.y - y_shift) / y_scale if lik.y.size else lik.y
    alpha = op.solve(y_norm) if lik.y.size else np.zeros(0)
    return WSGPModel(
        kind=ModelKind.WSGP,
        datasets=tuple(datasets),
        task_kernels=tuple(task_kernels),
        source_weights=np.asarray(source_weights, dtype=float),
        y_shift=y_shift,
        y_scale=y_scale,
        op=op,
        alpha=alpha,
    )


def make_wsgp_model(datasets, task_kernels, source_weights, y_shift=0.0, y_scale=1.0):
    """Assemble a WSGP model from explicit hyperparameters (no fitting)."""
    if len(datasets) < 2:
        raise InputError("need at least one source and the target")
    return _factorize_wsgp(tuple(datasets), tuple(task_kernels), source_weights, y_shift, y_scale)


def train_wsgp(sources, target, rng, n_restarts=10):
    """Multistart blocked maximum-likelihood training of WSGP."""
    sources = tuple(sources)
    if len(sources) < 1:
        raise InputError("at least one source task is required")
    datasets = sources + (target,)
    rng = np.random.default_rng(rng)
    y_all = np.concatenate([d.observations for d in datasets])
    _, y_shift, y_scale = normalize_targets(y_all)
    norm_datasets = tuple(
        type(d)(d.inputs, (d.observations - y_shift) / y_scale, d.task_id)
        for d in datasets
    )
    lik = _WSGPLikelihood(norm_datasets, datasets[0].input_dim)

    def neg(raw):
        lml, grad = lik.value_and_grad(raw)
        return -lml, -grad

    candidates, failures = [], []
    for restart in range(n_restarts):
        x0 = np.clip(rng.standard_normal(lik.n_free), RAW_LO, RAW_HI)
        try:
            f0, _ = neg(x0)
            candidates.append((f0, restart, x0))
            res = sopt.minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=lik.bounds)
            if np.isfinite(res.fun):
                candidates.append((float(res.fun), restart, res.x))
        except NumericalError as err:
            failures.append(f"restart {restart}: {err}")
    if not candidates:
        raise NumericalError("WSGP training failed on all restarts: " + "; ".join(failures))
    best = min(candidates, key=lambda c: (c[0], c[1]))
    task_kernels, weights = lik.hyperparams(best[2])
    return _factorize_wsgp(datasets, task_kernels, weights, y_shift, y_scale)
