"""Service-level acceptance: wire-protocol conformance and the desk-scale
learning-signal bar, both measured with the evaluation harness's own
operations."""

from __future__ import annotations

import base64
import random

import requests

from formbench.cli import main as formbench_main
from formbench.corpus import SourceDataset, Split, load_relation_dataset
from formbench.geometry import BBox
from formbench.imgio import encode_png
from formbench.localization import (
    BackendKind,
    LocalizationError,
    LocalizationQuery,
    LocalizationResult,
    RemoteBackend,
    localization_accuracy,
    truth_table,
    wire_contract_errors,
)
from localizer_service.cli import main as service_main
from localizer_service.model import load_model
from localizer_service.service import BackgroundServer, create_app


def _train_docs(corpus_root):
    return load_relation_dataset(corpus_root, SourceDataset.SYNTHETIC, Split.TRAIN)


def _locate(url, payload, **kwargs):
    return requests.post(f"{url}/v1/locate", json=payload, timeout=10, **kwargs)


def _image_b64(image):
    return base64.b64encode(encode_png(image)).decode("ascii")


# -- wire-protocol conformance ----------------------------------------------------


def test_service_passes_the_harness_contract_probes(
    service_url, corpus_root, training_examples
):
    doc = _train_docs(corpus_root)[0]
    violations = wire_contract_errors(
        service_url, doc.image,
        known_field_name=training_examples[0].field_name,
    )
    assert violations == []
    print("ACCEPTANCE PASS: service conforms to the locate wire protocol "
          "(health, 422 shape, valid bbox schema)")


def test_missing_field_name_gets_422_with_error_string(service_url, corpus_root):
    doc = _train_docs(corpus_root)[0]
    response = _locate(service_url, {"image": _image_b64(doc.image)})
    assert response.status_code == 422
    assert isinstance(response.json()["error"], str)


def test_blank_field_name_gets_422(service_url, corpus_root):
    doc = _train_docs(corpus_root)[0]
    response = _locate(
        service_url, {"image": _image_b64(doc.image), "field_name": "   "}
    )
    assert response.status_code == 422
    assert "empty" in response.json()["error"]


def test_undecodable_image_gets_422(service_url):
    response = _locate(
        service_url, {"image": "not base64 png!", "field_name": "Name"}
    )
    assert response.status_code == 422
    assert "decode" in response.json()["error"]


def test_responses_are_deterministic(service_url, corpus_root, training_examples):
    doc = _train_docs(corpus_root)[0]
    payload = {
        "image": _image_b64(doc.image),
        "field_name": training_examples[0].field_name,
    }
    first = _locate(service_url, payload)
    second = _locate(service_url, payload)
    assert first.status_code == second.status_code == 200
    assert first.content == second.content
    BBox.from_list(first.json()["bbox"])


def test_novel_field_name_still_returns_a_valid_box(service_url, corpus_root):
    # The model is open-vocabulary: an unseen name gets its best guess,
    # never a malformed response.
    doc = _train_docs(corpus_root)[0]
    response = _locate(
        service_url,
        {"image": _image_b64(doc.image), "field_name": "Never Seen Before"},
    )
    assert response.status_code == 200
    body = response.json()
    BBox.from_list(body["bbox"])
    assert 0.0 <= body["confidence"] <= 1.0


# -- desk-scale learning signal ----------------------------------------------------


def test_served_accuracy_beats_uniform_random_baseline(service_url, corpus_root):
    docs = _train_docs(corpus_root)
    truth = truth_table(docs)
    backend = RemoteBackend(service_url)

    predictions = []
    for doc in docs:
        for spec in doc.fields:
            query = LocalizationQuery(doc.doc_id, doc.image, spec.hierarchical_name)
            try:
                result = backend.locate(query)
            except LocalizationError:
                result = None
            predictions.append((query, result))

    served = localization_accuracy(predictions, truth)

    rng = random.Random(1999)
    baseline_predictions = []
    for query, _ in predictions:
        xs = sorted(rng.uniform(0.0, 1.0) for _ in range(2))
        ys = sorted(rng.uniform(0.0, 1.0) for _ in range(2))
        baseline_predictions.append((query, LocalizationResult(
            bbox=BBox(xs[0], ys[0], xs[1], ys[1]),
            confidence=0.5,
            backend=BackendKind.REMOTE,
        )))
    baseline = localization_accuracy(baseline_predictions, truth)

    assert served > baseline
    print(f"ACCEPTANCE PASS: held-in accuracy over the wire {served:.3f} "
          f"strictly exceeds the uniform-random baseline {baseline:.3f}")


# -- command line round trip --------------------------------------------------------


def test_cli_train_writes_a_servable_model_directory(
    corpus_root, tmp_path, capsys
):
    model_dir = tmp_path / "model"
    rc = service_main([
        "train", "--corpus", str(corpus_root), "--out", str(model_dir),
        "--steps", "60", "--seed", "1",
    ])
    assert rc == 0
    assert "trained on 34 examples for 60 steps" in capsys.readouterr().out

    model, metadata = load_model(model_dir)
    assert metadata["full_scale_recipe"]["epochs"] == 6
    assert metadata["full_scale_recipe"]["batch_size"] == 8
    assert metadata["full_scale_recipe"]["learning_rate"] == 1e-6
    assert metadata["full_scale_recipe"]["schedule"] == "cosine"
    assert metadata["desk_scale_overrides"]["steps"] == 60
    assert metadata["desk_scale_overrides"]["train_examples"] == 34
    assert metadata["query_template"]
    assert metadata["decoding"].startswith("deterministic")

    # The written directory serves: health answers through the same app
    # factory the `serve` command uses.
    with BackgroundServer(create_app(model)) as url:
        health = requests.get(f"{url}/v1/health", timeout=10)
        assert health.status_code == 200
        assert health.json() == {"status": "ok"}


def test_synthesized_corpus_is_regenerated_not_shared(tmp_path):
    # Guard against fixture coupling: a fresh corpus in a fresh location
    # produces the same example count the session fixtures rely on.
    root = tmp_path / "fresh"
    rc = formbench_main([
        "synthesize", "--out", str(root), "--train-forms", "2",
        "--test-forms", "1",
    ])
    assert rc == 0
    from localizer_service.training import build_training_set

    assert len(build_training_set([root])) == 34
