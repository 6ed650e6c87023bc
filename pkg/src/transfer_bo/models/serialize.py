"""Serialization of trained transfer models for run resumption.

Models serialize to a JSON-compatible document: format version, kind tag,
all hyperparameters in constrained space, normalization state, and digests
referencing the task datasets (data are not embedded; loading requires the
same datasets and verifies the digests).
"""

import hashlib

import numpy as np

from .._linalg import InputError
from ..gp import KernelHyperparams
from .coreg import ModelKind
from .joint import JointTransferModel, make_joint_model
from .sequential import SequentialTransferModel, make_sequential_model
from .wsgp import WSGPModel, make_wsgp_model

__all__ = ["model_to_doc", "model_from_doc", "dataset_digest"]

FORMAT_VERSION = 1


def dataset_digest(dataset):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.inputs).tobytes())
    h.update(np.ascontiguousarray(dataset.observations).tobytes())
    return h.hexdigest()


def _dataset_ref(dataset):
    return {
        "task_id": dataset.task_id,
        "n_points": dataset.n_points,
        "input_dim": dataset.input_dim,
        "sha256": dataset_digest(dataset),
    }


def _hp_doc(hp):
    return {
        "signal_variance": hp.signal_variance,
        "lengthscales": hp.lengthscales.tolist(),
        "noise_variance": hp.noise_variance,
    }


def _hp_from_doc(doc):
    return KernelHyperparams.from_constrained(
        doc["signal_variance"], doc["lengthscales"], doc["noise_variance"]
    )


def model_to_doc(model):
    """Serialize a trained model to a JSON-compatible dict."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": str(model.kind.value if isinstance(model.kind, ModelKind) else model.kind),
        "datasets": [_dataset_ref(d) for d in model.datasets],
        "task_kernels": [_hp_doc(hp) for hp in model.task_kernels],
    }
    if isinstance(model, SequentialTransferModel):
        doc["mean_shifts"] = [lv.mean_shift for lv in model.levels]
    elif isinstance(model, WSGPModel):
        doc["source_weights"] = model.source_weights.tolist()
        doc["y_shift"] = model.y_shift
        doc["y_scale"] = model.y_scale
    elif isinstance(model, JointTransferModel):
        doc["y_shift"] = model.y_shift
        doc["y_scale"] = model.y_scale
        if model.kind in (ModelKind.MTGP, ModelKind.MTKGP):
            doc["coreg_matrices"] = [W.tolist() for W in model.spec.weight_matrices]
    else:
        raise InputError(f"cannot serialize {type(model).__name__}")
    return doc


def _check_refs(doc, datasets):
    refs = doc["datasets"]
    if len(refs) != len(datasets):
        raise InputError("dataset count does not match the document")
    for ref, d in zip(refs, datasets):
        if ref["n_points"] != d.n_points or ref["input_dim"] != d.input_dim:
            raise InputError("dataset shape does not match the document reference")
        if ref["sha256"] != dataset_digest(d):
            raise InputError("dataset digest mismatch; refusing to resume")


def _psd_factorization(W):
    """Exact factor/diag split reproducing W = F F^T + diag(d)."""
    W = np.asarray(W, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(W)
    eigvals = np.clip(eigvals, 0.0, None)
    factor = eigvecs * np.sqrt(eigvals)
    return factor, np.zeros(W.shape[0])


def model_from_doc(doc, datasets):
    """Rebuild a model from its document plus the original datasets."""
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported model document version: {doc.get('format_version')}")
    _check_refs(doc, datasets)
    kind = ModelKind(doc["kind"])
    kernels = [_hp_from_doc(h) for h in doc["task_kernels"]]
    if kind in (ModelKind.SHGP, ModelKind.BHGP, ModelKind.MHGP):
        return make_sequential_model(kind, datasets, kernels, doc["mean_shifts"])
    if kind is ModelKind.WSGP:
        return make_wsgp_model(
            datasets, kernels, np.asarray(doc["source_weights"]),
            doc["y_shift"], doc["y_scale"],
        )
    if kind is ModelKind.HGP:
        return make_joint_model(
            kind, datasets, kernels, y_shift=doc["y_shift"], y_scale=doc["y_scale"]
        )
    factors, diags = zip(*[_psd_factorization(W) for W in doc["coreg_matrices"]])
    return make_joint_model(
        kind,
        datasets,
        kernels,
        factors=list(factors),
        diags=list(diags),
        y_shift=doc["y_shift"],
        y_scale=doc["y_scale"],
    )
