"""Shared fixtures: an on-disk corpus, a fine-tuned model, a live service."""

from __future__ import annotations

import pytest

from formbench.cli import main as formbench_main
from localizer_service.model import new_model
from localizer_service.service import BackgroundServer, create_app
from localizer_service.training import build_training_set, fine_tune

TRAIN_SEED = 7
TRAIN_STEPS = 500


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    rc = formbench_main([
        "synthesize", "--out", str(root), "--train-forms", "2",
        "--test-forms", "1",
    ])
    assert rc == 0
    return root


@pytest.fixture(scope="session")
def training_examples(corpus_root):
    return build_training_set([corpus_root])


@pytest.fixture(scope="session")
def trained_model(training_examples):
    # The desk-scale criterion floor is 50 steps on 20 examples; this run
    # comfortably clears both.
    assert len(training_examples) >= 20
    model = new_model(seed=TRAIN_SEED)
    losses = fine_tune(model, training_examples, steps=TRAIN_STEPS,
                       seed=TRAIN_SEED)
    assert len(losses) == TRAIN_STEPS >= 50
    return model


@pytest.fixture(scope="session")
def service_url(trained_model):
    server = BackgroundServer(create_app(trained_model))
    url = server.start()
    yield url
    server.stop()
