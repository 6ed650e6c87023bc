import os

# Pin BLAS to one thread before numpy loads anywhere: the suite is dominated
# by small factorizations where OpenBLAS threading on this box is harmful,
# and the timing checks assume serial arithmetic.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from transfer_bo.gp import KernelHyperparams, TaskDataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_transfer_instance(rng, n_s=8, n_t=4, dim=1, noise_t=0.15):
    """A seeded source/target dataset pair with plausible hyperparameters."""
    Xs = rng.uniform(-3, 3, (n_s, dim))
    ys = np.sin(Xs @ np.ones(dim)) + 0.2 * rng.standard_normal(n_s)
    Xt = rng.uniform(-3, 3, (n_t, dim))
    yt = np.sin(Xt @ np.ones(dim)) - 0.3 * Xt[:, 0] + 0.2 * rng.standard_normal(n_t)
    hp_s = KernelHyperparams.from_constrained(
        1.0 + rng.uniform(0, 1), rng.uniform(0.5, 1.5, dim), rng.uniform(0.02, 0.2)
    )
    hp_t = KernelHyperparams.from_constrained(
        0.5 + rng.uniform(0, 1), rng.uniform(0.5, 1.5, dim), noise_t
    )
    return TaskDataset(Xs, ys, 0), TaskDataset(Xt, yt, 1), hp_s, hp_t
