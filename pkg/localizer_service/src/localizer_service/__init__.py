"""Reference implementation of the remote field-localization backend.

Trains a compact image+field-name grounding model on (field name, field
bounding box) pairs drawn from a canonical corpus, and serves it over the
locate wire protocol (`GET /v1/health`, `POST /v1/locate`).
"""

from localizer_service.model import (
    CompactGrounder,
    featurize_name,
    load_model,
    new_model,
    save_model,
)
from localizer_service.training import (
    ContaminationError,
    TrainExample,
    build_training_set,
    fine_tune,
)
from localizer_service.service import BackgroundServer, create_app, serve

__all__ = [
    "BackgroundServer",
    "CompactGrounder",
    "ContaminationError",
    "TrainExample",
    "build_training_set",
    "create_app",
    "featurize_name",
    "fine_tune",
    "load_model",
    "new_model",
    "save_model",
    "serve",
]
