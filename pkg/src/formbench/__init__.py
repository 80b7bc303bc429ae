"""formbench: an end-to-end benchmark harness for form filling on document images.

The package covers the full loop: corpus ingestion and conversion to a
canonical schema, persona/fact management, a pixel-level form editor with a
small action API, field localization backends, model-driven episode running,
and center-in-box scoring with macro aggregation and error attribution.
"""

from __future__ import annotations

from formbench._kernels import backend_name
from formbench.errors import (
    ConfigurationError,
    CorpusError,
    EmptyDatasetError,
    EpisodeOverError,
    EvaluationInputError,
    FormbenchError,
    IngestionError,
    InvalidBoxError,
    InvalidImageDimensionsError,
    InvalidSegmentError,
    MissingAssetError,
    UnsatisfiableSpecError,
)
from formbench.geometry import (
    BBox,
    PixelBBox,
    Point,
    boxes_disjoint,
    center,
    contains,
    denormalize,
    normalize,
)
from formbench.persona import (
    CorrectnessKind,
    CorrectnessSpec,
    Persona,
    PersonaMode,
    evaluate_correctness,
    normalize_text,
    render_persona_prompt,
    spec_witness,
)
from formbench.corpus import (
    DatasetStats,
    FieldKind,
    FieldSpec,
    FormDocument,
    SourceDataset,
    Split,
    Word,
    build_hierarchical_name,
    corpus_fingerprint,
    dataset_stats,
    load_relation_dataset,
    redact_values,
)
from formbench.editor import (
    ActionFeedback,
    Canvas,
    DeleteText,
    FeedbackStatus,
    PlaceByFieldName,
    PlaceText,
    SignOrInitial,
    Terminate,
    apply_action,
    estimate_text_bbox,
    new_canvas,
    overlay_set_of_marks,
    parse_actions,
    render,
)
from formbench.localization import (
    HeuristicBackend,
    LocalizationError,
    LocalizationQuery,
    LocalizationResult,
    OracleBackend,
    RecordingBackend,
    RemoteBackend,
    locate,
    localization_accuracy,
    place_by_field_name,
    truth_table,
    wire_contract_errors,
)
from formbench.agent import (
    HTTPModelClient,
    Mode,
    ReplayModelClient,
    RunConfig,
    ScriptedModelClient,
    Toolset,
    Transcript,
    build_prompt,
    compute_cost,
    run_benchmark,
    run_episode,
)
from formbench.evaluation import (
    EvaluationReport,
    FieldOutcome,
    aggregate_macro,
    build_report,
    error_attribution,
    extract_field_value,
    score_form,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    # errors
    "FormbenchError",
    "InvalidBoxError",
    "InvalidImageDimensionsError",
    "InvalidSegmentError",
    "CorpusError",
    "IngestionError",
    "MissingAssetError",
    "EmptyDatasetError",
    "UnsatisfiableSpecError",
    "ConfigurationError",
    "EpisodeOverError",
    "EvaluationInputError",
    # geometry
    "Point",
    "BBox",
    "PixelBBox",
    "center",
    "contains",
    "boxes_disjoint",
    "normalize",
    "denormalize",
    # personas and correctness
    "CorrectnessKind",
    "CorrectnessSpec",
    "Persona",
    "PersonaMode",
    "evaluate_correctness",
    "normalize_text",
    "render_persona_prompt",
    "spec_witness",
    # corpus
    "DatasetStats",
    "FieldKind",
    "FieldSpec",
    "FormDocument",
    "SourceDataset",
    "Split",
    "Word",
    "build_hierarchical_name",
    "corpus_fingerprint",
    "dataset_stats",
    "load_relation_dataset",
    "redact_values",
    # editor
    "ActionFeedback",
    "Canvas",
    "DeleteText",
    "FeedbackStatus",
    "PlaceByFieldName",
    "PlaceText",
    "SignOrInitial",
    "Terminate",
    "apply_action",
    "estimate_text_bbox",
    "new_canvas",
    "overlay_set_of_marks",
    "parse_actions",
    "render",
    # localization
    "HeuristicBackend",
    "LocalizationError",
    "LocalizationQuery",
    "LocalizationResult",
    "OracleBackend",
    "RecordingBackend",
    "RemoteBackend",
    "locate",
    "localization_accuracy",
    "place_by_field_name",
    "truth_table",
    "wire_contract_errors",
    # episodes
    "HTTPModelClient",
    "Mode",
    "ReplayModelClient",
    "RunConfig",
    "ScriptedModelClient",
    "Toolset",
    "Transcript",
    "build_prompt",
    "compute_cost",
    "run_benchmark",
    "run_episode",
    # evaluation
    "EvaluationReport",
    "FieldOutcome",
    "aggregate_macro",
    "build_report",
    "error_attribution",
    "extract_field_value",
    "score_form",
]
