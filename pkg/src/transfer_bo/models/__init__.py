"""Transfer-learning GP models over one or more source tasks and a target.

Seven kinds: jointly trained (MTGP, MTKGP, WSGP, HGP) and sequentially
trained (SHGP, BHGP, MHGP), plus the no-transfer GPBO baseline.
"""

from .._linalg import InputError
from .coreg import (
    JOINT_KINDS,
    SEQUENTIAL_KINDS,
    CoregionalizationSpec,
    ModelKind,
    build_joint_kernel,
)
from .joint import JointTransferModel, make_joint_model, train_joint_dense
from .plain import KIND_GPBO, PlainGPModel, train_plain
from .sequential import (
    SequentialTransferModel,
    fit_target_stage,
    make_sequential_model,
    meta_train_sources,
    source_chain,
    train_sequential,
)
from .serialize import model_from_doc, model_to_doc
from .wsgp import BlockedInverse, WSGPModel, block_inverse_wsgp, make_wsgp_model, train_wsgp

__all__ = [
    "ModelKind",
    "JOINT_KINDS",
    "SEQUENTIAL_KINDS",
    "KIND_GPBO",
    "ALL_MODEL_NAMES",
    "CoregionalizationSpec",
    "build_joint_kernel",
    "JointTransferModel",
    "SequentialTransferModel",
    "WSGPModel",
    "PlainGPModel",
    "BlockedInverse",
    "block_inverse_wsgp",
    "train_joint",
    "train_sequential",
    "train_model",
    "predict_joint",
    "predict_shgp",
    "predict_bhgp",
    "predict_mhgp",
    "make_joint_model",
    "make_wsgp_model",
    "make_sequential_model",
    "meta_train_sources",
    "fit_target_stage",
    "source_chain",
    "model_to_doc",
    "model_from_doc",
    "ModelFitter",
]

ALL_MODEL_NAMES = [KIND_GPBO] + [k.value for k in ModelKind]


def train_joint(kind, sources, target, rng, n_restarts=10):
    """Train a jointly optimized kind (MTGP, MTKGP, WSGP, HGP)."""
    kind = ModelKind(kind)
    if kind not in JOINT_KINDS:
        raise InputError(f"{kind.value} is not a jointly trained kind")
    if kind is ModelKind.WSGP:
        return train_wsgp(sources, target, rng, n_restarts)
    return train_joint_dense(kind, sources, target, rng, n_restarts)


def train_model(kind, sources, target, rng, n_restarts=10):
    """Train any model kind by name, including the GPBO baseline."""
    if str(kind) == KIND_GPBO:
        return train_plain(target, rng, n_restarts)
    kind = ModelKind(kind)
    if kind in JOINT_KINDS:
        return train_joint(kind, sources, target, rng, n_restarts)
    return train_sequential(kind, sources, target, rng, n_restarts)


def _checked_predict(model, Xq, expected_kinds):
    if model.kind not in expected_kinds:
        raise InputError(f"model kind {model.kind} not in {expected_kinds}")
    return model.predict(Xq)


def predict_joint(model, Xq):
    """Target-task posterior of a jointly trained model."""
    return _checked_predict(model, Xq, JOINT_KINDS)


def predict_shgp(model, Xq):
    return _checked_predict(model, Xq, {ModelKind.SHGP})


def predict_bhgp(model, Xq):
    return _checked_predict(model, Xq, {ModelKind.BHGP})


def predict_mhgp(model, Xq):
    return _checked_predict(model, Xq, {ModelKind.MHGP})


class ModelFitter:
    """Refits a model kind as target data grow during optimization.

    Joint kinds retrain everything each call; sequential kinds meta-train
    the sources once (on the first call) and refit only the target stage
    afterwards, matching their modular training contract.
    """

    def __init__(self, kind, sources, n_restarts=10):
        self.kind = str(kind)
        self.sources = tuple(sources)
        self.n_restarts = n_restarts
        self._source_levels = None

    def fit(self, target, rng):
        if self.kind == KIND_GPBO:
            return train_plain(target, rng, self.n_restarts)
        kind = ModelKind(self.kind)
        if kind in JOINT_KINDS:
            return train_joint(kind, self.sources, target, rng, self.n_restarts)
        if self._source_levels is None:
            self._source_levels = meta_train_sources(
                kind, self.sources, rng, self.n_restarts
            )
        return fit_target_stage(kind, self._source_levels, target, rng, self.n_restarts)
