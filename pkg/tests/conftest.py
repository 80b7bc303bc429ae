from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from formbench.synthetic import build_corpus

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def synthetic_corpus():
    """The bundled synthetic corpus: (docs, personas, doc_id → persona_id)."""
    return build_corpus()


@pytest.fixture(scope="session")
def persona_for_doc(synthetic_corpus):
    docs, personas, assignment = synthetic_corpus
    by_id = {p.persona_id: p for p in personas}
    return {doc.doc_id: by_id[assignment[doc.doc_id]] for doc in docs}
