"""Synthetic benchmark function families with parameter distributions.

Five families (Forrester, Alpine, Branin, Hartmann3, Hartmann6), each a
conventional benchmark with probability distributions placed on some of its
parameters, plus noisy data generation and grid-certified true minima.

The Branin family is implemented with the squared parenthesised term,
a*(x2 - b*x1^2 + c*x1 - r)^2 + s*(1-t)*cos(x1) + s. Without the square the
function is unbounded below on the box and has no meaningful minimum, so the
linear variant that sometimes appears in print is treated as a typo.
"""

import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize as sopt

from ._linalg import InputError
from .gp import TaskDataset

__all__ = [
    "Family",
    "FamilyTask",
    "evaluate",
    "evaluate_many",
    "sample_task",
    "target_task",
    "original_task",
    "alpine_benchmark_shifts",
    "generate_source_data",
    "true_minimum",
]

MAX_GRID_EVALS = 10 ** 7


class Family(str, Enum):
    FORRESTER = "forrester"
    ALPINE = "alpine"
    BRANIN = "branin"
    HARTMANN3 = "hartmann3"
    HARTMANN6 = "hartmann6"


_BOUNDS = {
    Family.FORRESTER: np.array([[0.0, 1.0]]),
    Family.ALPINE: np.array([[-10.0, 10.0]]),
    Family.BRANIN: np.array([[-5.0, 10.0], [0.0, 15.0]]),
    Family.HARTMANN3: np.array([[0.0, 1.0]] * 3),
    Family.HARTMANN6: np.array([[0.0, 1.0]] * 6),
}

_PARAM_NAMES = {
    Family.FORRESTER: ("a", "b", "c"),
    Family.ALPINE: ("s",),
    Family.BRANIN: ("a", "b", "c", "r", "s", "t"),
    Family.HARTMANN3: ("alpha1", "alpha2", "alpha3", "alpha4"),
    Family.HARTMANN6: ("alpha1", "alpha2", "alpha3", "alpha4"),
}

# Uniform parameter ranges defining each family.
_PARAM_RANGES = {
    Family.FORRESTER: np.array([[0.2, 3.0], [-5.0, 15.0], [-5.0, 5.0]]),
    Family.BRANIN: np.array(
        [[0.5, 1.5], [0.1, 0.15], [1.0, 2.0], [5.0, 7.0], [8.0, 12.0], [0.03, 0.05]]
    ),
    Family.HARTMANN3: np.array([[1.00, 1.02], [1.18, 1.20], [2.8, 3.0], [3.2, 3.4]]),
    Family.HARTMANN6: np.array([[1.00, 1.02], [1.18, 1.20], [2.8, 3.0], [3.2, 3.4]]),
}

HARTMANN3_A = np.array(
    [
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
    ]
)
HARTMANN3_P = 1e-4 * np.array(
    [
        [3689.0, 1170.0, 2673.0],
        [4699.0, 4387.0, 7470.0],
        [1091.0, 8732.0, 5547.0],
        [381.0, 5743.0, 8828.0],
    ]
)
HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
HARTMANN6_P = 1e-4 * np.array(
    [
        [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
        [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
        [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
        [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
    ]
)


@dataclass(frozen=True)
class FamilyTask:
    """One concrete member of a function family: parameters plus input box."""

    family: Family
    params: np.ndarray

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float).copy()
        expected = len(_PARAM_NAMES[self.family])
        if params.shape != (expected,):
            raise InputError(
                f"{self.family.value} expects {expected} parameters, got {params.shape}"
            )
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "family", Family(self.family))

    @property
    def bounds(self):
        return _BOUNDS[self.family].copy()

    @property
    def input_dim(self):
        return _BOUNDS[self.family].shape[0]

    @property
    def param_dict(self):
        return dict(zip(_PARAM_NAMES[self.family], self.params.tolist()))

    def describe(self):
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self.param_dict.items())
        return f"{self.family.value}({inner})"


def _check_box(task, X, tol=1e-9):
    bounds = _BOUNDS[task.family]
    if X.shape[1] != bounds.shape[0]:
        raise InputError(
            f"{task.family.value} expects {bounds.shape[0]}-dimensional inputs"
        )
    below = X < bounds[:, 0] - tol
    above = X > bounds[:, 1] + tol
    if np.any(below) or np.any(above):
        raise InputError(f"input outside the {task.family.value} box")


def evaluate_many(task, X):
    """Vectorized exact evaluation at rows of X (N x D)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if task.input_dim == 1 else X[None, :]
    _check_box(task, X)
    p = task.params
    if task.family is Family.FORRESTER:
        x = X[:, 0]
        a, b, c = p
        return a * (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0) + b * (x - 0.5) - c
    if task.family is Family.ALPINE:
        x = X[:, 0]
        (s,) = p
        return x * np.sin(x + np.pi + s) + 0.1 * x
    if task.family is Family.BRANIN:
        x1, x2 = X[:, 0], X[:, 1]
        a, b, c, r, s, t = p
        return a * (x2 - b * x1 ** 2 + c * x1 - r) ** 2 + s * (1.0 - t) * np.cos(x1) + s
    if task.family is Family.HARTMANN3:
        A, P = HARTMANN3_A, HARTMANN3_P
    else:
        A, P = HARTMANN6_A, HARTMANN6_P
    alpha = p
    # exponent_{n,i} = sum_j A_ij (x_nj - P_ij)^2
    diff = X[:, None, :] - P[None, :, :]
    expo = np.einsum("nij,ij->ni", diff * diff, A)
    return -np.exp(-expo) @ alpha


def evaluate(task, x):
    """Exact function value at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(evaluate_many(task, x)[0])


def sample_task(family, rng):
    """Draw one family member with parameters from the family distribution.

    The Alpine family has no continuous parameter distribution; its members
    are the five fixed shifts used in the multi-source benchmark, so a draw
    picks one of those uniformly.
    """
    family = Family(family)
    rng = np.random.default_rng(rng)
    if family is Family.ALPINE:
        shifts = alpine_benchmark_shifts()
        return FamilyTask(family, [shifts[rng.integers(len(shifts))]])
    ranges = _PARAM_RANGES[family]
    params = rng.uniform(ranges[:, 0], ranges[:, 1])
    return FamilyTask(family, params)


def target_task(family, rng):
    """Target-task protocol: Alpine targets are fixed at shift 0, all other
    families draw the target from the same distribution as the sources."""
    family = Family(family)
    if family is Family.ALPINE:
        return FamilyTask(family, [0.0])
    return sample_task(family, rng)


def original_task(family):
    """The canonical (non-random) member of each family."""
    family = Family(family)
    canonical = {
        Family.FORRESTER: [1.0, 0.0, 0.0],
        Family.ALPINE: [0.0],
        Family.BRANIN: [1.0, 5.1 / (4.0 * np.pi ** 2), 5.0 / np.pi, 6.0, 10.0, 1.0 / (8.0 * np.pi)],
        Family.HARTMANN3: [1.0, 1.2, 3.0, 3.2],
        Family.HARTMANN6: [1.0, 1.2, 3.0, 3.2],
    }
    return FamilyTask(family, canonical[family])


def alpine_benchmark_shifts():
    """Source shifts k*pi/12, k = 1..5, used by the fixed Alpine benchmark."""
    return [k * np.pi / 12.0 for k in range(1, 6)]


def generate_source_data(task, n, sigma, rng, task_id=0):
    """n uniform inputs over the box, observations f(x) + N(0, sigma^2)."""
    if n < 0:
        raise InputError("n must be >= 0")
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    rng = np.random.default_rng(rng)
    bounds = task.bounds
    X = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, task.input_dim))
    f = evaluate_many(task, X) if n > 0 else np.zeros(0)
    y = f + sigma * rng.standard_normal(n) if sigma > 0 else f
    return TaskDataset(X, y, task_id)


_MIN_CACHE = {}
_MIN_CACHE_LOCK = threading.Lock()

_DEFAULT_GRID = {1: 200_001, 2: 1415, 3: 215}


def _grid_minimum(task, per_dim):
    bounds = task.bounds
    dim = task.input_dim
    if per_dim ** dim > MAX_GRID_EVALS:
        raise InputError(
            f"grid of {per_dim}^{dim} points exceeds the {MAX_GRID_EVALS:.0e} budget"
        )
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in bounds]
    if dim == 1:
        X = axes[0][:, None]
        vals = evaluate_many(task, X)
        idx = int(np.argmin(vals))
        return X[idx], float(vals[idx])
    best_val = np.inf
    best_x = None
    # evaluate slice by slice along the first axis to bound memory
    rest = np.meshgrid(*axes[1:], indexing="ij")
    rest = np.stack([r.ravel() for r in rest], axis=1)
    for x0 in axes[0]:
        X = np.column_stack([np.full(rest.shape[0], x0), rest])
        vals = evaluate_many(task, X)
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_x = X[idx].copy()
    return best_x, best_val


def _multistart_minimum(task, n_starts=100, seed=0):
    bounds = task.bounds
    rng = np.random.default_rng(seed)
    best_val = np.inf
    best_x = None
    for _ in range(n_starts):
        x0 = rng.uniform(bounds[:, 0], bounds[:, 1])
        res = sopt.minimize(
            lambda x: evaluate(task, np.clip(x, bounds[:, 0], bounds[:, 1])),
            x0,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if res.fun < best_val:
            best_val = float(res.fun)
            best_x = np.clip(res.x, bounds[:, 0], bounds[:, 1])
    return best_x, best_val


def true_minimum(task, grid_density=None):
    """Certified (x_min, f_min) for a task; cached per task.

    Dense grid at `grid_density` points per dimension (family defaults keep
    the budget under 1e7 evaluations) followed by one local polish; Hartmann6
    uses 100-start local descent instead of a grid.
    """
    key = (task.family.value, task.params.tobytes(), grid_density)
    with _MIN_CACHE_LOCK:
        if key in _MIN_CACHE:
            return _MIN_CACHE[key]
    dim = task.input_dim
    if dim >= 6:
        x_min, f_min = _multistart_minimum(task)
    else:
        per_dim = grid_density if grid_density is not None else _DEFAULT_GRID[dim]
        x_min, f_min = _grid_minimum(task, per_dim)
        bounds = task.bounds
        res = sopt.minimize(
            lambda x: evaluate(task, np.clip(x, bounds[:, 0], bounds[:, 1])),
            x_min,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
        )
        if res.fun < f_min:
            x_min = np.clip(res.x, bounds[:, 0], bounds[:, 1])
            f_min = float(res.fun)
    result = (np.asarray(x_min, dtype=float), float(f_min))
    with _MIN_CACHE_LOCK:
        _MIN_CACHE[key] = result
    return result
