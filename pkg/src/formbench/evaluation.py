"""Scoring and reporting: field-level outcomes, per-dataset accuracies,
macro averages, cost, and error attribution.

A field's extracted value is the space-joined concatenation (reading order:
top-to-bottom, then left-to-right by item center) of every placed item whose
center lies inside the field's box; correctness is judged by the field's
spec against the persona.  Fields expected to stay empty are excluded from
both numerator and denominator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from formbench.agent import (
    CostReport,
    EpisodeResult,
    RunConfig,
    Toolset,
    Transcript,
    compute_cost,
)
from formbench.corpus import FieldSpec, FormDocument, SourceDataset
from formbench.editor import Canvas
from formbench.errors import EvaluationInputError
from formbench.geometry import contains
from formbench.localization import LocalizationResult, localization_accuracy
from formbench.persona import Persona, evaluate_correctness

# Datasets whose forms are in English; the fields-per-form trend line is fit
# over these only, so language effects don't confound it.
ENGLISH_DATASETS = frozenset({
    SourceDataset.AUTO_LOANS.value,
    SourceDataset.FUNSD.value,
    SourceDataset.FORM_NLU.value,
    SourceDataset.SYNTHETIC.value,
})


@dataclass(frozen=True)
class FieldOutcome:
    field_id: str
    extracted_value: str
    correct: bool
    contributing_item_ids: Tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "field_id": self.field_id,
            "extracted_value": self.extracted_value,
            "correct": self.correct,
            "contributing_item_ids": list(self.contributing_item_ids),
        }


def extract_field_value(canvas: Canvas, spec: FieldSpec) -> str:
    """Concatenate (with spaces) the items whose centers lie in the field."""
    hits = [item for item in canvas.items if contains(spec.bbox, item.center)]
    hits.sort(key=lambda item: (item.center.y, item.center.x, item.item_id))
    return " ".join(item.value for item in hits)


def _contributing_ids(canvas: Canvas, spec: FieldSpec) -> Tuple[int, ...]:
    hits = [item for item in canvas.items if contains(spec.bbox, item.center)]
    hits.sort(key=lambda item: (item.center.y, item.center.x, item.item_id))
    return tuple(item.item_id for item in hits)


def score_form(canvas: Canvas, doc: FormDocument, persona: Persona
               ) -> List[FieldOutcome]:
    """One outcome per expected-nonempty field; expected-empty are excluded.

    An empty extraction is always incorrect for a field that expects a
    value; otherwise the field's correctness spec decides.
    """
    outcomes = []
    for spec in doc.fields:
        if not spec.expected_nonempty:
            continue
        extracted = extract_field_value(canvas, spec)
        if extracted == "":
            correct = False
        else:
            correct = evaluate_correctness(spec.correctness, extracted, persona)
        outcomes.append(
            FieldOutcome(
                field_id=spec.field_id,
                extracted_value=extracted,
                correct=correct,
                contributing_item_ids=_contributing_ids(canvas, spec),
            )
        )
    return outcomes


def aggregate_macro(
    per_dataset: Mapping[str, Union[float, Sequence[float]]]
) -> float:
    """Unweighted mean over datasets, averaging settings within each first.

    Each value is either a single accuracy or a sequence of setting
    accuracies (e.g. one-shot and iterative) that are averaged before the
    cross-dataset mean.
    """
    if not per_dataset:
        raise EvaluationInputError("no per-dataset accuracies to aggregate")
    means = []
    for key, value in per_dataset.items():
        if isinstance(value, (int, float)):
            means.append(float(value))
        else:
            values = [float(v) for v in value]
            if not values:
                raise EvaluationInputError(f"dataset {key!r} has no accuracy values")
            means.append(sum(values) / len(values))
    return sum(means) / len(means)


def error_attribution(
    transcripts: Sequence[Transcript],
    docs: Sequence[FormDocument],
    gt_coords_accuracy: Optional[float] = None,
    localization_acc: Optional[float] = None,
) -> Dict[str, Optional[float]]:
    """The three error figures.

    understanding: Σ|placements − fields| / Σ fields over documents, where
    placements counts successful placement actions and fields counts the
    expected-nonempty fields.  reasoning: 1 − accuracy with ground-truth
    coordinates supplied.  localization: 1 − localizer center-accuracy.
    The latter two are None when their inputs were not measured.
    """
    by_doc = {doc.doc_id: doc for doc in docs}
    total_fields = 0
    total_gap = 0.0
    for transcript in transcripts:
        doc = by_doc.get(transcript.doc_id)
        if doc is None:
            raise EvaluationInputError(
                f"transcript for unknown document {transcript.doc_id!r}"
            )
        fields = sum(1 for s in doc.fields if s.expected_nonempty)
        placements = _count_placements(transcript)
        total_fields += fields
        total_gap += abs(placements - fields)
    if total_fields == 0:
        raise EvaluationInputError("error attribution over zero fields is undefined")
    return {
        "understanding": total_gap / total_fields,
        "reasoning": None if gt_coords_accuracy is None else 1.0 - gt_coords_accuracy,
        "localization": None if localization_acc is None else 1.0 - localization_acc,
    }


_PLACEMENT_ACTIONS = ("PlaceText", "SignOrInitial", "PlaceByFieldName")


def _count_placements(transcript: Transcript) -> int:
    count = 0
    for record in transcript.rounds:
        ok_indices = {
            fb.action_index for fb in record.feedback if fb.status.value == "OK"
        }
        for action in record.actions:
            if (action.get("action") in _PLACEMENT_ACTIONS
                    and action.get("action_index") in ok_indices):
                count += 1
    return count


def accuracy_by_fields_per_form(
    points: Sequence[Tuple[str, float, float]],
) -> Tuple[List[Tuple[str, float, float]], Optional[float]]:
    """The scatter table (dataset, fields/form, accuracy) plus a trend slope.

    The slope is least-squares over log10(fields/form) for English datasets
    only, and None when fewer than two such points exist.
    """
    rows = [(str(ds), float(fpf), float(acc)) for ds, fpf, acc in points]
    english = [(math.log10(fpf), acc) for ds, fpf, acc in rows
               if ds in ENGLISH_DATASETS and fpf > 0]
    slope: Optional[float] = None
    if len(english) >= 2:
        n = len(english)
        mean_x = sum(x for x, _ in english) / n
        mean_y = sum(y for _, y in english) / n
        sxx = sum((x - mean_x) ** 2 for x, _ in english)
        if sxx > 0:
            slope = sum((x - mean_x) * (y - mean_y) for x, y in english) / sxx
    return rows, slope


# -- overrides ---------------------------------------------------------------


@dataclass(frozen=True)
class Override:
    correct: bool
    reason: str


def load_overrides(path) -> Dict[str, Override]:
    """Read a manual-review override file: field_id → {correct, reason}."""
    data = json.loads(open(path, encoding="utf-8").read())
    overrides = {}
    for field_id, entry in data.items():
        if isinstance(entry, bool):
            overrides[field_id] = Override(correct=entry, reason="")
        else:
            overrides[field_id] = Override(
                correct=bool(entry["correct"]), reason=str(entry.get("reason", ""))
            )
    return overrides


def apply_overrides(
    outcomes: Sequence[FieldOutcome], overrides: Mapping[str, Override]
) -> List[FieldOutcome]:
    adjusted = []
    for outcome in outcomes:
        override = overrides.get(outcome.field_id)
        if override is None or override.correct == outcome.correct:
            adjusted.append(outcome)
        else:
            adjusted.append(
                FieldOutcome(
                    field_id=outcome.field_id,
                    extracted_value=outcome.extracted_value,
                    correct=override.correct,
                    contributing_item_ids=outcome.contributing_item_ids,
                )
            )
    return adjusted


# -- reports ------------------------------------------------------------------


@dataclass
class EvaluationReport:
    config: RunConfig
    per_dataset: Dict[str, Dict[str, float]]
    macro_average: float
    cost: CostReport
    error_attribution: Dict[str, Optional[float]]
    per_field: List[FieldOutcome] = field(default_factory=list)
    overrides: Dict[str, Override] = field(default_factory=dict)
    failed_episodes: List[str] = field(default_factory=list)
    corpus_fingerprint: str = ""

    def to_json(self) -> dict:
        config = self.config.to_json()
        # Execution knobs (worker count, retry policy) don't alter results;
        # leaving them out keeps equal-outcome reports byte-identical.
        for knob in ("parallelism", "retries", "retry_backoff_s"):
            config.pop(knob, None)
        return {
            "config": config,
            "corpus_fingerprint": self.corpus_fingerprint,
            "per_dataset": self.per_dataset,
            "macro_average": self.macro_average,
            "cost": self.cost.to_json(),
            "error_attribution": self.error_attribution,
            "per_field": [o.to_json() for o in self.per_field],
            "overrides": {
                fid: {"correct": o.correct, "reason": o.reason}
                for fid, o in sorted(self.overrides.items())
            },
            "failed_episodes": sorted(self.failed_episodes),
        }

    def dumps(self) -> str:
        """Deterministic serialization: equal reports are byte-identical."""
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def build_report(
    results: Sequence[EpisodeResult],
    config: RunConfig,
    overrides: Optional[Mapping[str, Override]] = None,
    locate_records: Optional[
        Sequence[Tuple[str, str, Optional[LocalizationResult]]]
    ] = None,
    corpus_fingerprint: str = "",
) -> EvaluationReport:
    """Score every episode and assemble the run-level report.

    The understanding figure is always computed from the transcripts; the
    reasoning figure only when this run used ground-truth coordinates (its
    own accuracy measures document reasoning); the localization figure only
    when locate attempts were recorded (matched against ground-truth names).
    """
    if not results:
        raise EvaluationInputError("no episode results to report")
    overrides = dict(overrides or {})

    per_dataset_outcomes: Dict[str, List[FieldOutcome]] = {}
    all_outcomes: List[FieldOutcome] = []
    failed = []
    for result in results:
        outcomes = score_form(result.canvas, result.doc, result.persona)
        outcomes = apply_overrides(outcomes, overrides)
        per_dataset_outcomes.setdefault(
            result.doc.source_dataset.value, []
        ).extend(outcomes)
        all_outcomes.extend(outcomes)
        if result.transcript.failed:
            failed.append(result.doc.doc_id)

    per_dataset: Dict[str, Dict[str, float]] = {}
    accuracies: Dict[str, float] = {}
    for dataset, outcomes in sorted(per_dataset_outcomes.items()):
        correct = sum(1 for o in outcomes if o.correct)
        accuracy = correct / len(outcomes) if outcomes else 0.0
        per_dataset[dataset] = {"accuracy": accuracy, "fields": len(outcomes)}
        accuracies[dataset] = accuracy

    macro = aggregate_macro(accuracies) if accuracies else 0.0
    total_fields = sum(len(v) for v in per_dataset_outcomes.values())
    transcripts = [r.transcript for r in results]
    cost = compute_cost(
        transcripts,
        config.price_per_input_token,
        config.price_per_output_token,
        max(1, total_fields),
    )

    overall_correct = sum(1 for o in all_outcomes if o.correct)
    overall_accuracy = overall_correct / total_fields if total_fields else 0.0
    gt_accuracy = overall_accuracy if config.toolset is Toolset.GT_COORDS else None

    loc_accuracy = None
    if locate_records:
        truth = {}
        for result in results:
            for spec in result.doc.fields:
                truth[(result.doc.doc_id, spec.hierarchical_name)] = spec.bbox
        known = [
            (_RecordQuery(doc_id, name), loc)
            for doc_id, name, loc in locate_records
            if (doc_id, name) in truth
        ]
        if known:
            loc_accuracy = localization_accuracy(known, truth)

    attribution = error_attribution(
        transcripts,
        [r.doc for r in results],
        gt_coords_accuracy=gt_accuracy,
        localization_acc=loc_accuracy,
    )

    return EvaluationReport(
        config=config,
        per_dataset=per_dataset,
        macro_average=macro,
        cost=cost,
        error_attribution=attribution,
        per_field=sorted(all_outcomes, key=lambda o: o.field_id),
        overrides=dict(overrides),
        failed_episodes=failed,
        corpus_fingerprint=corpus_fingerprint,
    )


@dataclass(frozen=True)
class _RecordQuery:
    """Minimal stand-in for LocalizationQuery when scoring recorded attempts
    (the image is irrelevant to the accuracy metric)."""

    doc_id: str
    field_name: str


def report_csv_rows(reports: Sequence[EvaluationReport]) -> List[List[str]]:
    """Flatten reports into table rows: one per (model, setting, dataset)."""
    rows = [[
        "model_id", "mode", "toolset", "persona_mode", "dataset",
        "accuracy", "fields", "macro_average", "usd_per_thousand_fields",
    ]]
    for report in reports:
        cfg = report.config
        for dataset, stats in sorted(report.per_dataset.items()):
            rows.append([
                cfg.model_id,
                cfg.mode.value,
                cfg.toolset.value,
                cfg.persona_mode.value,
                dataset,
                f"{stats['accuracy']:.6f}",
                str(int(stats["fields"])),
                f"{report.macro_average:.6f}",
                f"{report.cost.usd_per_thousand_fields:.6f}",
            ])
    return rows


def format_percent(fraction: float) -> str:
    """Human-table formatting: one decimal percent."""
    return f"{100.0 * fraction:.1f}"
