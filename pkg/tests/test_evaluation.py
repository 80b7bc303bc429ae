"""Scoring, aggregation, attribution, and report assembly tests."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formbench.agent import (
    Mode,
    RunConfig,
    Toolset,
    Transcript,
    run_benchmark,
)
from formbench.agent import RoundRecord
from formbench.corpus import FieldKind, FieldSpec, FormDocument, SourceDataset, Split
from formbench.editor import ActionFeedback, FeedbackStatus, ItemKind, new_canvas, place_item
from formbench.errors import EvaluationInputError
from formbench.evaluation import (
    ENGLISH_DATASETS,
    FieldOutcome,
    Override,
    accuracy_by_fields_per_form,
    aggregate_macro,
    apply_overrides,
    build_report,
    error_attribution,
    extract_field_value,
    format_percent,
    load_overrides,
    report_csv_rows,
    score_form,
)
from formbench.geometry import BBox
from formbench.localization import BackendKind, LocalizationResult
from formbench.persona import CorrectnessKind, CorrectnessSpec, Persona
from formbench.scripted import perfect_client
from tests import oracles


def _field(field_id, bbox, kind=FieldKind.TEXT, expected_nonempty=True,
           fact_key=None):
    name = f"Field {field_id}"
    return FieldSpec(
        field_id=field_id,
        name=name,
        hierarchical_name=name,
        bbox=BBox(*bbox),
        kind=kind,
        correctness=CorrectnessSpec(
            CorrectnessKind.EXACT, fact_keys=(fact_key or f"field.{field_id}",)
        ),
        expected_nonempty=expected_nonempty,
    )


def _doc(fields, doc_id="d1", dataset=SourceDataset.SYNTHETIC, width=200,
         height=150):
    return FormDocument(
        doc_id=doc_id,
        image=np.full((height, width, 3), 255, dtype=np.uint8),
        width=width,
        height=height,
        fields=fields,
        words=None,
        source_dataset=dataset,
        language="en",
        split=Split.TEST,
        values_present=False,
    )


def _canvas(width=200, height=150, doc_id="d1"):
    return new_canvas(np.full((height, width, 3), 255, dtype=np.uint8),
                      doc_id=doc_id)


# -- extraction ----------------------------------------------------------------


def test_extract_joins_items_in_reading_order():
    canvas = _canvas()
    spec = _field("f1", (0.1, 0.1, 0.9, 0.9))
    # Place out of reading order; extraction must sort by (y, x, id).
    place_item(canvas, 0.7, 0.5, "world", ItemKind.TEXT, 0)
    place_item(canvas, 0.3, 0.5, "hello", ItemKind.TEXT, 1)
    place_item(canvas, 0.5, 0.2, "greetings", ItemKind.TEXT, 2)
    assert extract_field_value(canvas, spec) == "greetings hello world"


def test_extract_ignores_items_outside_field():
    canvas = _canvas()
    spec = _field("f1", (0.0, 0.0, 0.4, 0.4))
    place_item(canvas, 0.2, 0.2, "inside", ItemKind.TEXT, 0)
    place_item(canvas, 0.8, 0.8, "outside", ItemKind.TEXT, 1)
    assert extract_field_value(canvas, spec) == "inside"


def test_extract_empty_canvas():
    assert extract_field_value(_canvas(), _field("f1", (0.1, 0.1, 0.5, 0.5))) == ""


# A brute-force cross-check on random canvases: disjoint grid-cell fields,
# items anywhere, every field's extraction must match the oracle exactly.
_CELLS = [
    (c / 5, r / 4, (c + 1) / 5, (r + 1) / 4) for r in range(4) for c in range(5)
]


@st.composite
def _random_layout(draw):
    cell_indices = draw(
        st.lists(st.integers(0, 19), min_size=1, max_size=8, unique=True)
    )
    items = draw(
        st.lists(
            st.tuples(
                st.floats(0.02, 0.98), st.floats(0.02, 0.98),
                st.text("abcdefg", min_size=1, max_size=5),
            ),
            max_size=12,
        )
    )
    return cell_indices, items


@given(_random_layout())
def test_extraction_matches_brute_force(layout):
    cell_indices, raw_items = layout
    canvas = _canvas()
    for i, (cx, cy, value) in enumerate(raw_items):
        place_item(canvas, cx, cy, value, ItemKind.TEXT, i)
    fields = [_field(f"c{i}", _CELLS[i]) for i in cell_indices]

    oracle_items = [
        (item.item_id, item.value, item.center.x, item.center.y)
        for item in canvas.items
    ]
    oracle_fields = [
        (spec.field_id, spec.bbox.x0, spec.bbox.y0, spec.bbox.x1, spec.bbox.y1)
        for spec in fields
    ]
    expected = oracles.exhaustive_field_values(oracle_items, oracle_fields)
    for spec in fields:
        assert extract_field_value(canvas, spec) == expected[spec.field_id]


# -- scoring --------------------------------------------------------------------


PERSONA = Persona(persona_id="p1", facts={"field.f1": "Ada", "field.f2": "42"})


def test_score_form_marks_matches_and_mismatches():
    doc = _doc([
        _field("f1", (0.0, 0.0, 0.4, 0.4)),
        _field("f2", (0.6, 0.6, 0.9, 0.9)),
    ])
    canvas = _canvas()
    place_item(canvas, 0.2, 0.2, "Ada", ItemKind.TEXT, 0)
    place_item(canvas, 0.7, 0.7, "wrong", ItemKind.TEXT, 1)
    outcomes = score_form(canvas, doc, PERSONA)
    assert [o.correct for o in outcomes] == [True, False]
    assert outcomes[0].extracted_value == "Ada"
    assert outcomes[0].contributing_item_ids == (0,)


def test_score_form_empty_extraction_is_incorrect():
    doc = _doc([_field("f1", (0.0, 0.0, 0.4, 0.4))])
    outcomes = score_form(_canvas(), doc, PERSONA)
    assert len(outcomes) == 1
    assert not outcomes[0].correct
    assert outcomes[0].extracted_value == ""


def test_score_form_skips_expected_empty_fields():
    doc = _doc([
        _field("f1", (0.0, 0.0, 0.4, 0.4)),
        _field("blank", (0.6, 0.6, 0.9, 0.9), expected_nonempty=False),
    ])
    outcomes = score_form(_canvas(), doc, PERSONA)
    assert [o.field_id for o in outcomes] == ["f1"]


def test_outcome_json_shape():
    outcome = FieldOutcome("f1", "Ada", True, (3, 5))
    assert outcome.to_json() == {
        "field_id": "f1",
        "extracted_value": "Ada",
        "correct": True,
        "contributing_item_ids": [3, 5],
    }


# -- macro aggregation -------------------------------------------------------------


def test_macro_averages_settings_within_dataset_first():
    per_dataset = {"A": [0.2, 0.4], "B": 0.6}
    assert aggregate_macro(per_dataset) == pytest.approx(0.45)


def test_macro_rejects_empty_inputs():
    with pytest.raises(EvaluationInputError):
        aggregate_macro({})
    with pytest.raises(EvaluationInputError):
        aggregate_macro({"A": []})


@given(
    st.dictionaries(
        st.text("ABCDE", min_size=1, max_size=3),
        st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4),
        min_size=1,
        max_size=5,
    )
)
def test_macro_matches_hand_computation(per_dataset):
    assert aggregate_macro(per_dataset) == pytest.approx(
        oracles.macro_by_hand(per_dataset)
    )


# -- error attribution ---------------------------------------------------------------


def _transcript_with_placements(doc_id, ok_placements, noise=0):
    """A transcript whose rounds contain the given number of accepted
    placements plus some rejected/irrelevant actions."""
    actions = []
    feedback = []
    index = 0
    for _ in range(ok_placements):
        actions.append({"action": "PlaceText", "action_index": index})
        feedback.append(ActionFeedback(index, FeedbackStatus.OK))
        index += 1
    for _ in range(noise):
        actions.append({"action": "PlaceText", "action_index": index})
        feedback.append(ActionFeedback(index, FeedbackStatus.OUT_OF_BOUNDS))
        actions.append({"action": "DeleteText", "action_index": index + 1})
        feedback.append(ActionFeedback(index + 1, FeedbackStatus.OK))
        index += 2
    record = RoundRecord(
        request_digest="x", response_text="[]", actions=actions, feedback=feedback
    )
    return Transcript(doc_id=doc_id, persona_id="p1", rounds=[record])


def test_understanding_measures_placement_gap():
    doc = _doc([_field(f"f{i}", _CELLS[i]) for i in range(4)])
    # 6 accepted placements against 4 expected fields: gap 2/4.  Rejected
    # placements and deletions must not count.
    transcript = _transcript_with_placements("d1", 6, noise=3)
    result = error_attribution([transcript], [doc])
    assert result["understanding"] == pytest.approx(0.5)
    assert result["reasoning"] is None
    assert result["localization"] is None


def test_understanding_aggregates_over_documents():
    docs = [
        _doc([_field(f"a{i}", _CELLS[i]) for i in range(4)], doc_id="d1"),
        _doc([_field(f"b{i}", _CELLS[i]) for i in range(6)], doc_id="d2"),
    ]
    transcripts = [
        _transcript_with_placements("d1", 4),   # exact
        _transcript_with_placements("d2", 1),   # 5 short
    ]
    result = error_attribution(transcripts, docs)
    assert result["understanding"] == pytest.approx((0 + 5) / 10)


def test_attribution_complements_measured_accuracies():
    doc = _doc([_field("f1", _CELLS[0])])
    transcript = _transcript_with_placements("d1", 1)
    result = error_attribution(
        [transcript], [doc], gt_coords_accuracy=0.42, localization_acc=0.74
    )
    assert result["reasoning"] == pytest.approx(0.58)
    assert result["localization"] == pytest.approx(0.26)


def test_attribution_rejects_unknown_documents():
    transcript = _transcript_with_placements("ghost", 1)
    with pytest.raises(EvaluationInputError, match="ghost"):
        error_attribution([transcript], [])


def test_attribution_rejects_zero_fields():
    doc = _doc([_field("f1", _CELLS[0], expected_nonempty=False)])
    transcript = _transcript_with_placements("d1", 1)
    with pytest.raises(EvaluationInputError):
        error_attribution([transcript], [doc])


# -- fields-per-form trend ---------------------------------------------------------


def test_trend_slope_matches_reference_fit():
    points = [
        ("SYNTHETIC", 10.0, 0.9),
        ("FUNSD", 15.0, 0.6),
        ("FORM_NLU", 40.0, 0.4),
    ]
    rows, slope = accuracy_by_fields_per_form(points)
    assert rows == points
    import math

    expected = oracles.least_squares_slope(
        [(math.log10(fpf), acc) for _, fpf, acc in points]
    )
    assert slope == pytest.approx(expected)


def test_trend_excludes_non_english_datasets():
    points = [("XFUND", 10.0, 0.9), ("XFUND", 40.0, 0.2), ("FUNSD", 15.0, 0.6)]
    _, slope = accuracy_by_fields_per_form(points)
    assert slope is None  # only one English point
    assert "XFUND" not in ENGLISH_DATASETS


def test_trend_requires_two_points():
    _, slope = accuracy_by_fields_per_form([("FUNSD", 15.0, 0.6)])
    assert slope is None


@given(
    st.lists(
        st.tuples(
            st.sampled_from(sorted(ENGLISH_DATASETS)),
            st.floats(1.0, 100.0),
            st.floats(0.0, 1.0),
        ),
        min_size=2,
        max_size=8,
    )
)
def test_trend_slope_property(points):
    import math

    _, slope = accuracy_by_fields_per_form(points)
    xs = [math.log10(fpf) for _, fpf, _ in points]
    if len(set(xs)) < 2:
        assert slope is None
    else:
        expected = oracles.least_squares_slope(
            [(math.log10(fpf), acc) for _, fpf, acc in points]
        )
        assert slope == pytest.approx(expected)


# -- overrides ---------------------------------------------------------------------


def test_load_overrides_accepts_bools_and_objects(tmp_path):
    path = tmp_path / "overrides.json"
    path.write_text(json.dumps({
        "f1": True,
        "f2": {"correct": False, "reason": "handwriting judged illegible"},
    }), encoding="utf-8")
    overrides = load_overrides(path)
    assert overrides["f1"] == Override(correct=True, reason="")
    assert overrides["f2"] == Override(
        correct=False, reason="handwriting judged illegible"
    )


def test_apply_overrides_flips_only_named_mismatches():
    outcomes = [
        FieldOutcome("f1", "x", False, ()),
        FieldOutcome("f2", "y", True, ()),
        FieldOutcome("f3", "z", False, ()),
    ]
    overrides = {
        "f1": Override(correct=True, reason="manual review"),
        "f2": Override(correct=True, reason="already right"),
    }
    adjusted = apply_overrides(outcomes, overrides)
    assert [o.correct for o in adjusted] == [True, True, False]
    assert adjusted[0].extracted_value == "x"


# -- report assembly ------------------------------------------------------------------


@pytest.fixture(scope="module")
def perfect_report(synthetic_corpus, persona_for_doc):
    docs, _, _ = synthetic_corpus
    config = RunConfig(mode=Mode.ITERATIVE, toolset=Toolset.GT_COORDS,
                       price_per_input_token=1e-6, price_per_output_token=2e-6)
    results = run_benchmark(docs, persona_for_doc,
                            config, perfect_client(docs, persona_for_doc))
    return build_report(results, config, corpus_fingerprint="abc123")


def test_report_perfect_run(perfect_report):
    report = perfect_report
    assert report.macro_average == 1.0
    stats = report.per_dataset["SYNTHETIC"]
    assert stats["accuracy"] == 1.0
    assert stats["fields"] == 64
    assert report.error_attribution["understanding"] == 0.0
    assert report.error_attribution["reasoning"] == 0.0  # GT run measures it
    assert report.error_attribution["localization"] is None
    assert report.failed_episodes == []
    assert report.corpus_fingerprint == "abc123"
    assert report.cost.usd_per_thousand_fields > 0


def test_report_without_gt_toolset_leaves_reasoning_unmeasured(
    synthetic_corpus, persona_for_doc
):
    docs, _, _ = synthetic_corpus
    config = RunConfig(mode=Mode.ONE_SHOT, toolset=Toolset.BASELINE_COORDS)
    results = run_benchmark(docs, persona_for_doc, config,
                            perfect_client(docs, persona_for_doc,
                                           Toolset.BASELINE_COORDS))
    report = build_report(results, config)
    assert report.error_attribution["reasoning"] is None


def test_report_scores_recorded_localizations(synthetic_corpus, persona_for_doc):
    docs, _, _ = synthetic_corpus
    config = RunConfig(mode=Mode.ITERATIVE, toolset=Toolset.FIELDFINDER)
    from formbench.localization import OracleBackend, RecordingBackend

    backend = RecordingBackend(OracleBackend.from_documents(docs))
    results = run_benchmark(docs, persona_for_doc, config,
                            perfect_client(docs, persona_for_doc,
                                           Toolset.FIELDFINDER),
                            localization_backend=backend)
    report = build_report(results, config, locate_records=backend.records)
    assert report.error_attribution["localization"] == 0.0  # oracle never misses


def test_report_ignores_locate_records_without_truth(perfect_report,
                                                     synthetic_corpus,
                                                     persona_for_doc):
    docs, _, _ = synthetic_corpus
    config = RunConfig(mode=Mode.ITERATIVE, toolset=Toolset.GT_COORDS)
    results = run_benchmark(docs, persona_for_doc, config,
                            perfect_client(docs, persona_for_doc))
    bogus = [("no-such-doc", "No Field", None)]
    report = build_report(results, config, locate_records=bogus)
    assert report.error_attribution["localization"] is None


def test_report_lists_failed_episodes(synthetic_corpus, persona_for_doc):
    docs, _, _ = synthetic_corpus

    class _Dead:
        def call(self, request):
            raise IOError("no route to model")

    config = RunConfig(mode=Mode.ONE_SHOT, toolset=Toolset.GT_COORDS,
                       retries=1, retry_backoff_s=0.0)
    results = run_benchmark(docs, persona_for_doc, config, _Dead())
    report = build_report(results, config)
    assert sorted(report.failed_episodes) == sorted(d.doc_id for d in docs)
    # Nothing was placed, so every expected field scores zero.
    assert report.macro_average == 0.0


def test_report_json_hides_execution_knobs(perfect_report):
    payload = perfect_report.to_json()
    for knob in ("parallelism", "retries", "retry_backoff_s"):
        assert knob not in payload["config"]
    assert payload["config"]["toolset"] == "GT_COORDS"


def test_report_serialization_is_stable(perfect_report):
    first = perfect_report.dumps()
    second = perfect_report.dumps()
    assert first == second
    assert first.endswith("\n")
    assert json.loads(first)["macro_average"] == 1.0


def test_report_rejects_empty_results():
    with pytest.raises(EvaluationInputError):
        build_report([], RunConfig())


def test_report_applies_overrides(synthetic_corpus, persona_for_doc):
    docs, _, _ = synthetic_corpus
    config = RunConfig(mode=Mode.ITERATIVE, toolset=Toolset.GT_COORDS)
    results = run_benchmark(docs, persona_for_doc, config,
                            perfect_client(docs, persona_for_doc))
    target = results[0]
    victim_field = next(
        f.field_id for f in target.doc.fields if f.expected_nonempty
    )
    overrides = {victim_field: Override(correct=False, reason="spot check")}
    report = build_report(results, config, overrides=overrides)
    assert report.macro_average < 1.0
    flipped = [o for o in report.per_field if o.field_id == victim_field]
    assert flipped and not flipped[0].correct


# -- csv and formatting -----------------------------------------------------------------


def test_csv_rows_shape(perfect_report):
    rows = report_csv_rows([perfect_report])
    assert rows[0] == [
        "model_id", "mode", "toolset", "persona_mode", "dataset",
        "accuracy", "fields", "macro_average", "usd_per_thousand_fields",
    ]
    assert len(rows) == 1 + len(perfect_report.per_dataset)
    data = rows[1]
    assert data[4] == "SYNTHETIC"
    assert data[5] == "1.000000"
    assert data[6] == "64"


def test_format_percent():
    assert format_percent(0.805) == "80.5"
    assert format_percent(0.2296) == "23.0"
    assert format_percent(1.0) == "100.0"
    assert format_percent(0.0) == "0.0"
