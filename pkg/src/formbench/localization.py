"""Field localization: map (form image, field-name string) to a bounding box.

Three interchangeable backends implement the same contract: ORACLE looks the
name up in the corpus field table, HEURISTIC finds the labeled gap in the
word annotations, and REMOTE calls an HTTP service speaking the wire
protocol (POST /v1/locate, GET /v1/health).  The center-in-box accuracy
metric and the agent-facing place-by-name action live here too.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import requests

from formbench import imgio
from formbench.corpus import FieldSpec, FormDocument, Word
from formbench.editor import (
    ActionFeedback,
    Canvas,
    FeedbackStatus,
    ItemKind,
    place_item,
)
from formbench.errors import EpisodeOverError, EvaluationInputError, FormbenchError
from formbench.geometry import BBox, center, contains
from formbench.persona import NormalizationFlags, normalize_text

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_IN_FLIGHT = 4

# Tokens are compared case-insensitively with punctuation stripped.
_TOKEN_FLAGS = NormalizationFlags()


class BackendKind(Enum):
    ORACLE = "ORACLE"
    HEURISTIC = "HEURISTIC"
    REMOTE = "REMOTE"


class LocalizationErrorCode(Enum):
    FIELD_NOT_FOUND = "FIELD_NOT_FOUND"
    UNSUPPORTED_DOCUMENT = "UNSUPPORTED_DOCUMENT"
    BACKEND_UNAVAILABLE = "BACKEND_UNAVAILABLE"


class LocalizationError(FormbenchError):
    """A locate call that produced no box, tagged with why."""

    def __init__(self, code: LocalizationErrorCode, message: str):
        super().__init__(f"{code.value}: {message}")
        self.code = code


@dataclass(frozen=True)
class LocalizationQuery:
    doc_id: str
    image: np.ndarray
    field_name: str

    def __post_init__(self) -> None:
        if not self.field_name:
            raise ValueError("field_name must be non-empty")


@dataclass(frozen=True)
class LocalizationResult:
    bbox: BBox
    confidence: Optional[float]
    backend: BackendKind


class OracleBackend:
    """Ground-truth lookup: match the query against hierarchical field names,
    exact first, then case-insensitive."""

    kind = BackendKind.ORACLE

    def __init__(self, field_table: Mapping[str, Sequence[FieldSpec]]):
        self._table = {doc_id: list(fields) for doc_id, fields in field_table.items()}

    @classmethod
    def from_documents(cls, docs: Sequence[FormDocument]) -> "OracleBackend":
        return cls({doc.doc_id: doc.fields for doc in docs})

    def locate(self, query: LocalizationQuery) -> LocalizationResult:
        fields = self._table.get(query.doc_id)
        if fields is None:
            raise LocalizationError(
                LocalizationErrorCode.FIELD_NOT_FOUND,
                f"unknown document {query.doc_id!r}",
            )
        for spec in fields:
            if spec.hierarchical_name == query.field_name:
                return LocalizationResult(spec.bbox, 1.0, self.kind)
        lowered = query.field_name.lower()
        for spec in fields:
            if spec.hierarchical_name.lower() == lowered:
                return LocalizationResult(spec.bbox, 1.0, self.kind)
        raise LocalizationError(
            LocalizationErrorCode.FIELD_NOT_FOUND,
            f"no field named {query.field_name!r} in {query.doc_id!r}",
        )


class HeuristicBackend:
    """Annotation-driven stand-in for a learned localizer.

    Tokenize the query's final segment, find the contiguous same-line word
    span with the highest Jaccard token overlap (ties: topmost, then
    leftmost), and return the horizontal gap between that span and the next
    word to its right on the same line (or the page margin), at the span's
    vertical extent.
    """

    kind = BackendKind.HEURISTIC

    def __init__(self, words_table: Mapping[str, Optional[Sequence[Word]]]):
        self._table = dict(words_table)

    @classmethod
    def from_documents(cls, docs: Sequence[FormDocument]) -> "HeuristicBackend":
        return cls({doc.doc_id: doc.words for doc in docs})

    def locate(self, query: LocalizationQuery) -> LocalizationResult:
        words = self._table.get(query.doc_id)
        if not words:
            raise LocalizationError(
                LocalizationErrorCode.UNSUPPORTED_DOCUMENT,
                f"document {query.doc_id!r} has no word annotations",
            )
        segment = query.field_name.split(" | ")[-1]
        target = set(_tokenize(segment))
        if not target:
            raise LocalizationError(
                LocalizationErrorCode.FIELD_NOT_FOUND,
                f"query {query.field_name!r} has no usable tokens",
            )
        ordered = sorted(words, key=lambda w: (w.bbox.y0, w.bbox.x0))
        best: Optional[Tuple[float, float, float, List[Word]]] = None
        max_len = len(target) + 2
        for start in range(len(ordered)):
            span: List[Word] = []
            tokens: set = set()
            for word in ordered[start:]:
                if span and not _same_line(span[0].bbox, word.bbox):
                    break
                span = span + [word]
                if len(span) > max_len:
                    break
                tokens = tokens | set(_tokenize(word.text))
                overlap = len(tokens & target)
                union = len(tokens | target)
                if union == 0 or overlap == 0:
                    continue
                score = overlap / union
                span_box = _union_box(span)
                key = (-score, span_box.y0, span_box.x0)
                if best is None or key < (best[0], best[1], best[2]):
                    best = (key[0], key[1], key[2], list(span))
        if best is None:
            raise LocalizationError(
                LocalizationErrorCode.FIELD_NOT_FOUND,
                f"no word span overlaps {query.field_name!r}",
            )
        span_box = _union_box(best[3])
        right_edge = 1.0
        for word in ordered:
            if word.bbox.x0 > span_box.x1 and _same_line(span_box, word.bbox):
                right_edge = min(right_edge, word.bbox.x0)
        if right_edge <= span_box.x1:
            raise LocalizationError(
                LocalizationErrorCode.FIELD_NOT_FOUND,
                f"no gap to the right of the label for {query.field_name!r}",
            )
        return LocalizationResult(
            BBox(span_box.x1, span_box.y0, right_edge, span_box.y1),
            None,
            self.kind,
        )


def _tokenize(text: str) -> List[str]:
    return normalize_text(text, _TOKEN_FLAGS).split()


def _same_line(a: BBox, b: BBox) -> bool:
    """Vertical overlap of at least half the shorter box's height."""
    overlap = min(a.y1, b.y1) - max(a.y0, b.y0)
    shorter = min(a.y1 - a.y0, b.y1 - b.y0)
    return shorter > 0 and overlap >= 0.5 * shorter


def _union_box(words: Sequence[Word]) -> BBox:
    return BBox(
        min(w.bbox.x0 for w in words),
        min(w.bbox.y0 for w in words),
        max(w.bbox.x1 for w in words),
        max(w.bbox.y1 for w in words),
    )


class RemoteBackend:
    """Wire-protocol client: POST /v1/locate on an external service.

    Concurrency is capped by a semaphore (default 4 in-flight) and each call
    carries a timeout.  HTTP 422 means the service found no field
    (FIELD_NOT_FOUND); anything else unexpected is BACKEND_UNAVAILABLE.
    """

    kind = BackendKind.REMOTE

    def __init__(
        self,
        base_url: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._semaphore = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()

    def locate(self, query: LocalizationQuery) -> LocalizationResult:
        payload = {
            "image": base64.b64encode(imgio.encode_png(query.image)).decode("ascii"),
            "field_name": query.field_name,
        }
        with self._semaphore:
            try:
                response = self._session.post(
                    f"{self.base_url}/v1/locate", json=payload, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                raise LocalizationError(
                    LocalizationErrorCode.BACKEND_UNAVAILABLE, str(exc)
                ) from exc
        if response.status_code == 422:
            detail = ""
            try:
                detail = response.json().get("error", "")
            except ValueError:
                pass
            raise LocalizationError(
                LocalizationErrorCode.FIELD_NOT_FOUND, detail or "field not found"
            )
        if response.status_code != 200:
            raise LocalizationError(
                LocalizationErrorCode.BACKEND_UNAVAILABLE,
                f"unexpected status {response.status_code}",
            )
        try:
            body = response.json()
            bbox = BBox.from_list(body["bbox"])
            confidence = body.get("confidence")
            if confidence is not None:
                confidence = float(confidence)
        except (ValueError, KeyError, TypeError) as exc:
            raise LocalizationError(
                LocalizationErrorCode.BACKEND_UNAVAILABLE,
                f"malformed response body: {exc}",
            ) from exc
        return LocalizationResult(bbox, confidence, self.kind)


class RecordingBackend:
    """Wrap a backend and log every locate attempt (for error attribution)."""

    def __init__(self, inner):
        self.inner = inner
        self.kind = inner.kind
        self.records: List[Tuple[str, str, Optional[LocalizationResult]]] = []
        self._lock = threading.Lock()

    def locate(self, query: LocalizationQuery) -> LocalizationResult:
        try:
            result = self.inner.locate(query)
        except LocalizationError:
            with self._lock:
                self.records.append((query.doc_id, query.field_name, None))
            raise
        with self._lock:
            self.records.append((query.doc_id, query.field_name, result))
        return result


def locate(query: LocalizationQuery, backend) -> LocalizationResult:
    """Run one localization query against the given backend."""
    return backend.locate(query)


def localization_accuracy(
    predictions: Sequence[Tuple[LocalizationQuery, Optional[LocalizationResult]]],
    truth: Mapping[Tuple[str, str], BBox],
) -> float:
    """Fraction of predictions whose box center falls inside the true box.

    ``truth`` is keyed by (doc_id, field_name).  Failed localizations
    (result None) count as incorrect; a prediction with no truth entry is an
    input error.
    """
    if not predictions:
        raise EvaluationInputError("no predictions to score")
    correct = 0
    for query, result in predictions:
        key = (query.doc_id, query.field_name)
        if key not in truth:
            raise EvaluationInputError(
                f"no ground-truth box for {key!r}"
            )
        if result is not None and contains(truth[key], center(result.bbox)):
            correct += 1
    return correct / len(predictions)


def truth_table(docs: Sequence[FormDocument]) -> Dict[Tuple[str, str], BBox]:
    """Ground-truth (doc_id, hierarchical_name) → bbox map for accuracy."""
    table: Dict[Tuple[str, str], BBox] = {}
    for doc in docs:
        for spec in doc.fields:
            table[(doc.doc_id, spec.hierarchical_name)] = spec.bbox
    return table


def place_by_field_name(
    canvas: Canvas,
    field_name: str,
    value: str,
    backend,
    action_index: int = 0,
) -> ActionFeedback:
    """Locate a field by name and place ``value`` at its center.

    The font height is capped by the located box's height so text stays
    legible in dense forms.  A failed locate yields LOCALIZATION_FAILED
    feedback and leaves the canvas untouched.
    """
    if canvas.terminated:
        raise EpisodeOverError("action applied to a terminated canvas")
    if value == "":
        return ActionFeedback(action_index, FeedbackStatus.EMPTY_VALUE,
                              "value must be non-empty")
    query = LocalizationQuery(canvas.doc_id, canvas.base, field_name)
    try:
        result = backend.locate(query)
    except LocalizationError as exc:
        return ActionFeedback(
            action_index, FeedbackStatus.LOCALIZATION_FAILED, str(exc)
        )
    c = center(result.bbox)
    return place_item(
        canvas, c.x, c.y, value, ItemKind.TEXT, action_index,
        font_height_frac=min(canvas.font_height_frac, result.bbox.height),
    )


# -- wire-protocol conformance -------------------------------------------------


def wire_contract_errors(base_url: str, probe_image: np.ndarray,
                         known_field_name: Optional[str] = None,
                         timeout_s: float = DEFAULT_TIMEOUT_S) -> List[str]:
    """Check a service against the wire protocol; returns violations found.

    Probes GET /v1/health, a /v1/locate call missing field_name (must be 422
    with an error string), and — when ``known_field_name`` is given — a real
    locate call whose 200 body must parse as a valid normalized bbox.
    """
    violations: List[str] = []
    base = base_url.rstrip("/")
    image_b64 = base64.b64encode(imgio.encode_png(probe_image)).decode("ascii")

    try:
        health = requests.get(f"{base}/v1/health", timeout=timeout_s)
        if health.status_code != 200 or health.json() != {"status": "ok"}:
            violations.append(
                f"/v1/health returned {health.status_code} {health.text[:200]!r}"
            )
    except (requests.RequestException, ValueError) as exc:
        violations.append(f"/v1/health unreachable or non-JSON: {exc}")

    try:
        missing = requests.post(
            f"{base}/v1/locate", json={"image": image_b64}, timeout=timeout_s
        )
        if missing.status_code != 422:
            violations.append(
                f"/v1/locate without field_name returned {missing.status_code}, want 422"
            )
        else:
            body = missing.json()
            if not isinstance(body.get("error"), str):
                violations.append('422 body must be {"error": <string>}')
    except (requests.RequestException, ValueError) as exc:
        violations.append(f"/v1/locate missing-field probe failed: {exc}")

    if known_field_name is not None:
        try:
            ok = requests.post(
                f"{base}/v1/locate",
                json={"image": image_b64, "field_name": known_field_name},
                timeout=timeout_s,
            )
            if ok.status_code == 200:
                body = ok.json()
                BBox.from_list(body["bbox"])  # raises when invalid
                if "confidence" not in body:
                    violations.append('200 body must include "confidence"')
                elif body["confidence"] is not None:
                    float(body["confidence"])
            elif ok.status_code == 422:
                if not isinstance(ok.json().get("error"), str):
                    violations.append('422 body must be {"error": <string>}')
            else:
                violations.append(
                    f"/v1/locate returned {ok.status_code}, want 200 or 422"
                )
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            violations.append(f"/v1/locate happy-path probe failed: {exc}")

    return violations
