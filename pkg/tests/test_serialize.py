import json

import numpy as np
import pytest

from conftest import random_transfer_instance
from transfer_bo._linalg import InputError
from transfer_bo.gp import TaskDataset
from transfer_bo.models import model_from_doc, model_to_doc, train_model


@pytest.mark.parametrize("kind", ["HGP", "MTGP", "MTKGP", "WSGP", "SHGP", "BHGP", "MHGP"])
def test_roundtrip_preserves_predictions(kind, rng):
    src, tgt, *_ = random_transfer_instance(rng, n_s=9, n_t=4)
    model = train_model(kind, [src], tgt, rng=0, n_restarts=2)
    doc = model_to_doc(model)
    # documents must survive JSON encoding
    doc = json.loads(json.dumps(doc))
    rebuilt = model_from_doc(doc, [src, tgt])
    Xq = rng.uniform(-3, 3, (5, 1))
    a, b = model.predict(Xq), rebuilt.predict(Xq)
    assert np.allclose(a.mean, b.mean, atol=1e-9)
    assert np.allclose(a.covariance, b.covariance, atol=1e-9)


def test_document_carries_kind_version_and_constrained_values(rng):
    src, tgt, *_ = random_transfer_instance(rng, n_s=6, n_t=3)
    model = train_model("SHGP", [src], tgt, rng=0, n_restarts=2)
    doc = model_to_doc(model)
    assert doc["format_version"] == 1
    assert doc["kind"] == "SHGP"
    for hp in doc["task_kernels"]:
        assert hp["signal_variance"] > 0
        assert all(l > 0 for l in hp["lengthscales"])
    assert [d["task_id"] for d in doc["datasets"]] == [0, 1]


def test_digest_mismatch_refuses_resume(rng):
    src, tgt, *_ = random_transfer_instance(rng, n_s=6, n_t=3)
    model = train_model("MHGP", [src], tgt, rng=0, n_restarts=2)
    doc = model_to_doc(model)
    tampered = TaskDataset(src.inputs, src.observations + 1.0, src.task_id)
    with pytest.raises(InputError):
        model_from_doc(doc, [tampered, tgt])


def test_wrong_version_rejected(rng):
    src, tgt, *_ = random_transfer_instance(rng, n_s=5, n_t=3)
    doc = model_to_doc(train_model("MHGP", [src], tgt, rng=0, n_restarts=2))
    doc["format_version"] = 99
    with pytest.raises(InputError):
        model_from_doc(doc, [src, tgt])
