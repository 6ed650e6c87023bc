"""Plain single-task GP baseline (no transfer), used as GPBO in the loop."""

from dataclasses import dataclass

from .._linalg import InputError
from ..gp import (
    ConditionedGP,
    GaussianPrediction,
    KernelHyperparams,
    TaskDataset,
    condition,
    normalize_targets,
    optimize_hyperparameters,
)

__all__ = ["PlainGPModel", "train_plain"]

KIND_GPBO = "GPBO"


@dataclass(frozen=True)
class PlainGPModel:
    """Normalized single-task GP with denormalizing predictions."""

    gp: ConditionedGP
    dataset: TaskDataset
    y_shift: float
    y_scale: float

    kind = KIND_GPBO

    @property
    def target_dataset(self):
        return self.dataset

    @property
    def target_inputs(self):
        return self.dataset.inputs

    @property
    def input_dim(self):
        return self.dataset.input_dim

    def predict(self, Xq):
        pred = self.gp.predict(Xq)
        return GaussianPrediction(
            pred.mean * self.y_scale + self.y_shift,
            pred.covariance * self.y_scale ** 2,
        )

    def predict_mean_var(self, Xq):
        mean, var = self.gp.predict_mean_var(Xq)
        return mean * self.y_scale + self.y_shift, var * self.y_scale ** 2


def train_plain(target, rng, n_restarts=10):
    """Fit a plain GP on normalized targets; empty data keeps the default prior."""
    if target.n_points == 0:
        hp = KernelHyperparams.default(target.input_dim)
        return PlainGPModel(condition(hp, target), target, 0.0, 1.0)
    if target.input_dim < 1:
        raise InputError("dataset must have at least one input dimension")
    y_norm, shift, scale = normalize_targets(target.observations)
    norm = TaskDataset(target.inputs, y_norm, target.task_id)
    hp = optimize_hyperparameters(norm, n_restarts=n_restarts, rng=rng)
    return PlainGPModel(condition(hp, norm), target, shift, scale)
