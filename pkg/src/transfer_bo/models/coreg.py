"""Coregionalization structure of the joint transfer kernels.

Each model kind combines per-task base kernels with task-indexed weight
matrices; the joint kernel between labelled points is
k((x,i),(x',j)) = sum_nu W_nu[i,j] * k_nu(x,x') + [x == x'][i == j] * noise_i,
with noise applied on exact (bitwise) input identity within the same task.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .._linalg import InputError
from ..gp import kernel_eval

__all__ = [
    "ModelKind",
    "JOINT_KINDS",
    "SEQUENTIAL_KINDS",
    "CoregionalizationSpec",
    "build_joint_kernel",
    "lowrank_coreg_matrix",
]


class ModelKind(str, Enum):
    MTGP = "MTGP"
    MTKGP = "MTKGP"
    WSGP = "WSGP"
    HGP = "HGP"
    SHGP = "SHGP"
    BHGP = "BHGP"
    MHGP = "MHGP"


JOINT_KINDS = frozenset({ModelKind.MTGP, ModelKind.MTKGP, ModelKind.WSGP, ModelKind.HGP})
SEQUENTIAL_KINDS = frozenset({ModelKind.SHGP, ModelKind.BHGP, ModelKind.MHGP})

# Low-rank factor count for the learned coregionalization matrices; caps the
# cubic growth of the MTGP parameter count at small task counts.
COREG_RANK = 2


def lowrank_coreg_matrix(factor, diag):
    """PSD matrix factor @ factor.T + diag(diag); diag must be >= 0."""
    factor = np.atleast_2d(np.asarray(factor, dtype=float))
    diag = np.asarray(diag, dtype=float)
    if np.any(diag < 0):
        raise InputError("coregionalization diagonal must be nonnegative")
    return factor @ factor.T + np.diag(diag)


def _hgp_matrices(n_tasks):
    mats = []
    for nu in range(n_tasks):
        W = np.zeros((n_tasks, n_tasks))
        W[nu:, nu:] = 1.0
        mats.append(W)
    return mats


def _block_diag_matrices(n_tasks):
    mats = []
    for nu in range(n_tasks):
        W = np.zeros((n_tasks, n_tasks))
        W[nu, nu] = 1.0
        mats.append(W)
    return mats


def _wsgp_matrices(n_tasks, source_weights):
    source_weights = np.asarray(source_weights, dtype=float)
    n_sources = n_tasks - 1
    if source_weights.shape != (n_sources,):
        raise InputError(f"WSGP needs {n_sources} source weights")
    if np.any(source_weights < 0):
        raise InputError("WSGP source weights must be >= 0 for PSD")
    mats = []
    for nu in range(n_sources):
        pick = np.zeros(n_tasks)
        pick[nu] = 1.0
        pick[-1] = 1.0
        W = np.outer(pick, pick) * source_weights[nu]
        W[nu, nu] += 1.0
        mats.append(W)
    target = np.zeros((n_tasks, n_tasks))
    target[-1, -1] = 1.0
    mats.append(target)
    return mats


@dataclass(frozen=True)
class CoregionalizationSpec:
    """Task-weight matrices of one model kind, one matrix per base kernel.

    For MTKGP there is a single shared base kernel, hence a single matrix;
    every other kind carries one matrix per task.
    """

    kind: ModelKind
    n_tasks: int
    weight_matrices: tuple
    source_weights: np.ndarray = None

    def __post_init__(self):
        mats = tuple(np.asarray(W, dtype=float) for W in self.weight_matrices)
        for W in mats:
            if W.shape != (self.n_tasks, self.n_tasks):
                raise InputError("weight matrix shape mismatch")
            if not np.allclose(W, W.T, atol=1e-12):
                raise InputError("weight matrices must be symmetric")
            eigs = np.linalg.eigvalsh(W)
            if eigs[0] < -1e-10 * max(eigs[-1], 1.0):
                raise InputError("weight matrices must be PSD")
        object.__setattr__(self, "weight_matrices", mats)
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.source_weights is not None:
            object.__setattr__(
                self, "source_weights", np.asarray(self.source_weights, dtype=float)
            )

    @classmethod
    def create(cls, kind, n_tasks, source_weights=None, factors=None, diags=None):
        """Build the spec for a kind from its native parameterization.

        MTGP/MTKGP take `factors` (list of task x rank arrays) and `diags`
        (list of nonnegative vectors); WSGP takes `source_weights`; the
        hierarchical and block-diagonal kinds have fixed patterns.
        """
        kind = ModelKind(kind)
        if n_tasks < 2:
            raise InputError("need at least one source and one target task")
        if kind in (ModelKind.HGP, ModelKind.SHGP):
            return cls(kind, n_tasks, _hgp_matrices(n_tasks))
        if kind in (ModelKind.MHGP, ModelKind.BHGP):
            return cls(kind, n_tasks, _block_diag_matrices(n_tasks))
        if kind is ModelKind.WSGP:
            if source_weights is None:
                raise InputError("WSGP requires source_weights")
            return cls(
                kind, n_tasks, _wsgp_matrices(n_tasks, source_weights), source_weights
            )
        # learned PSD matrices
        n_mats = 1 if kind is ModelKind.MTKGP else n_tasks
        if factors is None or diags is None:
            raise InputError(f"{kind.value} requires factors and diags")
        if len(factors) != n_mats or len(diags) != n_mats:
            raise InputError(f"{kind.value} expects {n_mats} factor/diag pairs")
        mats = [lowrank_coreg_matrix(f, d) for f, d in zip(factors, diags)]
        return cls(kind, n_tasks, tuple(mats))

    @property
    def n_kernels(self):
        return len(self.weight_matrices)


def _kernel_for(spec, task_kernels, nu):
    if spec.kind is ModelKind.MTKGP:
        return task_kernels[0]
    return task_kernels[nu]


def build_joint_kernel(spec, task_kernels):
    """Scalar joint kernel over labelled points.

    Returns k((x, i), (x', j)); noise enters only on bitwise-equal inputs
    within the same task. Raises on task indices outside 0..n_tasks-1.
    """
    task_kernels = tuple(task_kernels)
    if spec.kind is ModelKind.MTKGP:
        base = task_kernels[0]
        for hp in task_kernels[1:]:
            if not (
                np.allclose(hp.raw_lengthscales, base.raw_lengthscales)
                and hp.raw_signal_variance == base.raw_signal_variance
            ):
                raise InputError("MTKGP requires a shared base kernel across tasks")
    elif len(task_kernels) != spec.n_tasks:
        raise InputError("expected one kernel per task")

    def joint_kernel(xi, xj):
        x, i = xi
        xp, j = xj
        i, j = int(i), int(j)
        if not (0 <= i < spec.n_tasks and 0 <= j < spec.n_tasks):
            raise InputError(f"task index out of range: {i}, {j}")
        x = np.asarray(x, dtype=float).reshape(1, -1)
        xp = np.asarray(xp, dtype=float).reshape(1, -1)
        total = 0.0
        for nu, W in enumerate(spec.weight_matrices):
            w = W[i, j]
            if w != 0.0:
                total += w * float(kernel_eval(_kernel_for(spec, task_kernels, nu), x, xp)[0, 0])
        if i == j and x.shape == xp.shape and np.array_equal(x, xp):
            total += task_kernels[i].noise_variance
        return total

    return joint_kernel
