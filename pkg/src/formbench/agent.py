"""Episode orchestration: prompt assembly, model clients, and the
one-shot/iterative action-feedback loop.

An episode shows the model the form image, the persona, and the editing API
for the configured toolset; parses its JSON action list; applies each action
with per-action feedback; and repeats for up to the configured number of
rounds.  Model clients are pluggable — an HTTP chat client, a replay-file
client, and a scripted callable all satisfy the same synchronous contract.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import requests

from formbench import editor
from formbench.corpus import FormDocument
from formbench.editor import (
    Action,
    ActionFeedback,
    Canvas,
    DeleteText,
    FeedbackStatus,
    PlaceByFieldName,
    PlaceText,
    SignOrInitial,
    Terminate,
    action_to_json,
    apply_action,
    new_canvas,
    parse_actions_indexed,
)
from formbench.errors import ConfigurationError, EvaluationInputError
from formbench.geometry import center
from formbench.localization import place_by_field_name
from formbench.persona import Persona, PersonaMode, render_persona_prompt

DEFAULT_MAX_ROUNDS = 5
DEFAULT_RETRIES = 3
DEFAULT_RETRY_BACKOFF_S = 1.0
DEFAULT_GRID_N = 10

FINAL_ROUND_SENTENCE = "This is your final action."
CLOSING_INSTRUCTION = "Return a form-filling API call as a JSON list of dictionaries."

FORMATTING_RULES = (
    "Formatting rules:\n"
    '- Fill checkboxes with a single "x".\n'
    '- Format all dates as "MM/DD/YYYY".\n'
    '- Write names as "First Middle Last".'
)

HEADER = (
    "You are filling out the form shown in the form image on behalf of a "
    "user, using the editing API described below. Normalized coordinates "
    "are fractions of the page: (0, 0) is the top left corner and (1, 1) "
    "is the bottom right corner."
)

_COORD_API_DOC = (
    "Editing API:\n"
    "- PlaceText places a text string centered at (cx, cy). "
    'Example: {"action": "PlaceText", "cx": 0.5, "cy": 0.5, "value": "Hello World!"}\n'
    "- SignOrInitial places a signature or initials centered at (cx, cy). "
    'Example: {"action": "SignOrInitial", "cx": 0.5, "cy": 0.9, "value": "A. Miller"}\n'
    "- DeleteText removes every placed item whose box contains (x, y). "
    'Example: {"action": "DeleteText", "x": 0.5, "y": 0.5}\n'
    "- Terminate ends the session early. "
    'Example: {"action": "Terminate"}'
)

_FIELDFINDER_API_DOC = (
    "Editing API:\n"
    "- PlaceByFieldName writes a value into the named field. "
    'Example: {"action": "PlaceByFieldName", "field_name": "Section 1 | First Name", '
    '"value": "Hello World!"}\n'
    "- DeleteText removes every placed item whose box contains (x, y). "
    'Example: {"action": "DeleteText", "x": 0.5, "y": 0.5}\n'
    "- Terminate ends the session early. "
    'Example: {"action": "Terminate"}'
)


class Mode(Enum):
    ONE_SHOT = "ONE_SHOT"
    ITERATIVE = "ITERATIVE"


class Toolset(Enum):
    BASELINE_COORDS = "BASELINE_COORDS"
    BASELINE_SOM = "BASELINE_SOM"
    FIELDFINDER = "FIELDFINDER"
    GT_COORDS = "GT_COORDS"


COORDINATE_TOOLSETS = (Toolset.BASELINE_COORDS, Toolset.BASELINE_SOM, Toolset.GT_COORDS)

ALLOWED_ACTIONS: Dict[Toolset, tuple] = {
    Toolset.BASELINE_COORDS: (PlaceText, SignOrInitial, DeleteText, Terminate),
    Toolset.BASELINE_SOM: (PlaceText, SignOrInitial, DeleteText, Terminate),
    Toolset.GT_COORDS: (PlaceText, SignOrInitial, DeleteText, Terminate),
    Toolset.FIELDFINDER: (PlaceByFieldName, DeleteText, Terminate),
}


@dataclass(frozen=True)
class RunConfig:
    mode: Mode = Mode.ONE_SHOT
    toolset: Toolset = Toolset.BASELINE_COORDS
    persona_mode: PersonaMode = PersonaMode.TEXT
    max_rounds: int = DEFAULT_MAX_ROUNDS
    model_id: str = "scripted"
    price_per_input_token: float = 0.0
    price_per_output_token: float = 0.0
    seed: int = 0
    parallelism: Optional[int] = None
    grid_n: int = DEFAULT_GRID_N
    font_height_frac: float = editor.DEFAULT_FONT_HEIGHT_FRAC
    retries: int = DEFAULT_RETRIES
    retry_backoff_s: float = DEFAULT_RETRY_BACKOFF_S

    @property
    def effective_rounds(self) -> int:
        return 1 if self.mode is Mode.ONE_SHOT else self.max_rounds

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "toolset": self.toolset.value,
            "persona_mode": self.persona_mode.value,
            "max_rounds": self.max_rounds,
            "model_id": self.model_id,
            "price_per_input_token": self.price_per_input_token,
            "price_per_output_token": self.price_per_output_token,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "grid_n": self.grid_n,
            "font_height_frac": self.font_height_frac,
            "retries": self.retries,
            "retry_backoff_s": self.retry_backoff_s,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "RunConfig":
        def enum_value(enum_cls, raw, default):
            if raw is None:
                return default
            return enum_cls(str(raw).upper().replace("-", "_"))

        defaults = cls()
        return cls(
            mode=enum_value(Mode, data.get("mode"), defaults.mode),
            toolset=enum_value(Toolset, data.get("toolset"), defaults.toolset),
            persona_mode=enum_value(
                PersonaMode, data.get("persona_mode"), defaults.persona_mode
            ),
            max_rounds=int(data.get("max_rounds", defaults.max_rounds)),
            model_id=str(data.get("model_id", defaults.model_id)),
            price_per_input_token=float(
                data.get("price_per_input_token", defaults.price_per_input_token)
            ),
            price_per_output_token=float(
                data.get("price_per_output_token", defaults.price_per_output_token)
            ),
            seed=int(data.get("seed", defaults.seed)),
            parallelism=(
                int(data["parallelism"]) if data.get("parallelism") is not None else None
            ),
            grid_n=int(data.get("grid_n", defaults.grid_n)),
            font_height_frac=float(
                data.get("font_height_frac", defaults.font_height_frac)
            ),
            retries=int(data.get("retries", defaults.retries)),
            retry_backoff_s=float(
                data.get("retry_backoff_s", defaults.retry_backoff_s)
            ),
        )


# -- message parts and clients --------------------------------------------------


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: np.ndarray


MessagePart = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ModelRequest:
    parts: Tuple[MessagePart, ...]
    doc_id: str
    round_index: int

    def __post_init__(self) -> None:
        if not any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("every model request must include an image part")

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in self.parts:
            if isinstance(part, TextPart):
                h.update(b"T")
                h.update(part.text.encode("utf-8"))
            else:
                h.update(b"I")
                h.update(np.ascontiguousarray(part.image).tobytes())
        return h.hexdigest()

    @property
    def text(self) -> str:
        return "\n\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ModelResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


class ReplayModelClient:
    """Deterministic client reading responses from a replay file.

    The file is a JSON map from "<doc_id>/<round>" to either a response
    string or {"text", "input_tokens", "output_tokens"}.
    """

    def __init__(self, source: Union[str, Path, Mapping]):
        if isinstance(source, (str, Path)):
            self._table = json.loads(Path(source).read_text(encoding="utf-8"))
        else:
            self._table = dict(source)

    def call(self, request: ModelRequest) -> ModelResponse:
        key = f"{request.doc_id}/{request.round_index}"
        if key not in self._table:
            raise KeyError(f"replay file has no entry for {key!r}")
        entry = self._table[key]
        if isinstance(entry, str):
            return ModelResponse(entry, input_tokens=0, output_tokens=0)
        return ModelResponse(
            text=entry["text"],
            input_tokens=int(entry.get("input_tokens", 0)),
            output_tokens=int(entry.get("output_tokens", 0)),
        )


class ScriptedModelClient:
    """Client driven by a callable (doc_id, round_index) → response text.

    Token counts are deterministic character-count estimates so cost math
    stays reproducible in tests.
    """

    def __init__(self, script: Callable[[str, int], str]):
        self._script = script

    def call(self, request: ModelRequest) -> ModelResponse:
        text = self._script(request.doc_id, request.round_index)
        input_chars = sum(
            len(p.text) for p in request.parts if isinstance(p, TextPart)
        )
        image_parts = sum(1 for p in request.parts if isinstance(p, ImagePart))
        return ModelResponse(
            text=text,
            input_tokens=input_chars // 4 + 256 * image_parts,
            output_tokens=len(text) // 4,
        )


class HTTPModelClient:
    """Adapter for chat-completion-style HTTP endpoints.

    The credential is read from the environment variable named in the
    constructor — never stored in config files.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        credential_env: str = "MODEL_API_KEY",
        timeout_s: float = 120.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.credential_env = credential_env
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def call(self, request: ModelRequest) -> ModelResponse:
        from formbench import imgio
        import base64

        content = []
        for part in request.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                encoded = base64.b64encode(imgio.encode_png(part.image)).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{encoded}"},
                })
        headers = {}
        credential = os.environ.get(self.credential_env)
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        response = self._session.post(
            f"{self.base_url}/v1/chat/completions",
            json={
                "model": self.model_id,
                "messages": [{"role": "user", "content": content}],
            },
            headers=headers,
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        body = response.json()
        usage = body.get("usage", {})
        return ModelResponse(
            text=body["choices"][0]["message"]["content"],
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
        )


# -- transcripts -----------------------------------------------------------------


@dataclass
class RoundRecord:
    request_digest: str
    response_text: str
    actions: List[dict]
    feedback: List[ActionFeedback]

    def to_json(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "response_text": self.response_text,
            "actions": self.actions,
            "feedback": [fb.to_json() for fb in self.feedback],
        }


@dataclass
class Transcript:
    doc_id: str
    persona_id: str
    rounds: List[RoundRecord] = field(default_factory=list)
    terminated_early: bool = False
    failed: bool = False
    failure_reason: str = ""
    input_tokens: int = 0
    output_tokens: int = 0
    wall_time_s: float = 0.0

    def to_json(self, include_wall_time: bool = True) -> dict:
        out = {
            "doc_id": self.doc_id,
            "persona_id": self.persona_id,
            "rounds": [r.to_json() for r in self.rounds],
            "terminated_early": self.terminated_early,
            "failed": self.failed,
            "failure_reason": self.failure_reason,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
        }
        if include_wall_time:
            out["wall_time_s"] = self.wall_time_s
        return out


# -- prompt construction -----------------------------------------------------------


def _feedback_section(history: Sequence[Sequence[ActionFeedback]],
                      round_index: int) -> str:
    """Round k's feedback line is "Feedback k+1: [...]"; the current round's
    list is always empty (it hasn't happened yet)."""
    lines = []
    for i in range(round_index + 1):
        if i < len(history):
            rendered = json.dumps([fb.to_json() for fb in history[i]])
        else:
            rendered = "[]"
        lines.append(f"Feedback {i + 1}: {rendered}")
    return "\n".join(lines)


def build_prompt(
    doc: FormDocument,
    persona: Persona,
    config: RunConfig,
    history: Sequence[Sequence[ActionFeedback]],
    round_index: int,
) -> ModelRequest:
    """Assemble one round's model request.

    Part order: instruction header, API documentation for the toolset,
    persona text (plus persona images in IMAGE mode), ground-truth centroid
    lines for the GT toolset, formatting rules, the feedback section, the
    remaining-rounds statement, the form image, and the closing instruction.
    """
    if round_index >= config.effective_rounds:
        raise ValueError(
            f"round_index {round_index} out of range for {config.effective_rounds} rounds"
        )
    parts: List[MessagePart] = [TextPart(HEADER)]

    if config.toolset is Toolset.FIELDFINDER:
        parts.append(TextPart(_FIELDFINDER_API_DOC))
    else:
        parts.append(TextPart(_COORD_API_DOC))

    persona_text, persona_images = render_persona_prompt(persona, config.persona_mode)
    if persona_images:
        parts.append(TextPart(
            "User information. Some of it appears in the attached completed "
            "document image(s); the rest is listed here:\n" + persona_text
            if persona_text else
            "User information appears in the attached completed document image(s)."
        ))
        parts.extend(ImagePart(img) for img in persona_images)
    else:
        parts.append(TextPart("User information:\n" + persona_text))

    if config.toolset is Toolset.GT_COORDS:
        lines = []
        for spec in doc.fields:
            c = center(spec.bbox)
            lines.append(f"{spec.hierarchical_name}: ({c.x:.3f}, {c.y:.3f})")
        parts.append(TextPart(
            "Field centers (field name: (cx, cy)):\n" + "\n".join(lines)
        ))

    parts.append(TextPart(FORMATTING_RULES))
    parts.append(TextPart(_feedback_section(history, round_index)))

    remaining = config.effective_rounds - round_index
    if remaining <= 1:
        parts.append(TextPart(FINAL_ROUND_SENTENCE))
    else:
        parts.append(TextPart(
            f"You have {remaining} rounds of actions remaining, including this one."
        ))

    form_image = doc.image
    if config.toolset is Toolset.BASELINE_SOM:
        form_image = editor.overlay_set_of_marks(doc.image, config.grid_n)
    parts.append(ImagePart(form_image))
    parts.append(TextPart(CLOSING_INSTRUCTION))

    return ModelRequest(parts=tuple(parts), doc_id=doc.doc_id, round_index=round_index)


# -- episode loop --------------------------------------------------------------------


def _call_with_retries(client, request: ModelRequest, retries: int,
                       backoff_s: float) -> ModelResponse:
    last_exc: Optional[Exception] = None
    for attempt in range(max(1, retries)):
        try:
            return client.call(request)
        except Exception as exc:  # transport or client fault
            last_exc = exc
            if attempt + 1 < max(1, retries) and backoff_s > 0:
                time.sleep(backoff_s * (2 ** attempt))
    raise RuntimeError(f"model client failed after {retries} attempts: {last_exc}")


def run_episode(
    doc: FormDocument,
    persona: Persona,
    config: RunConfig,
    model_client,
    localization_backend=None,
) -> Tuple[Canvas, Transcript]:
    """Run one document's episode; returns the final canvas and transcript.

    The loop stops on Terminate, round exhaustion, or — in iterative mode —
    a round whose response parsed to zero actions.  Model-client failures
    after the configured retries mark the episode failed but keep the canvas
    for scoring.
    """
    if config.toolset is Toolset.FIELDFINDER and localization_backend is None:
        raise ConfigurationError("the field-name toolset requires a localization backend")

    canvas = new_canvas(doc.image, doc_id=doc.doc_id,
                        font_height_frac=config.font_height_frac)
    transcript = Transcript(doc_id=doc.doc_id, persona_id=persona.persona_id)
    history: List[List[ActionFeedback]] = []
    allowed = ALLOWED_ACTIONS[config.toolset]
    started = time.monotonic()

    for round_index in range(config.effective_rounds):
        canvas.round_index = round_index
        request = build_prompt(doc, persona, config, history, round_index)
        try:
            response = _call_with_retries(
                model_client, request, config.retries, config.retry_backoff_s
            )
        except RuntimeError as exc:
            transcript.failed = True
            transcript.failure_reason = str(exc)
            break

        transcript.input_tokens += response.input_tokens
        transcript.output_tokens += response.output_tokens

        indexed_actions, parse_errors = parse_actions_indexed(response.text)
        feedback_by_index: Dict[int, ActionFeedback] = {
            fb.action_index: fb for fb in parse_errors
        }
        for index, action in indexed_actions:
            if canvas.terminated:
                fb = ActionFeedback(
                    index, FeedbackStatus.IGNORED_AFTER_TERMINATE,
                    "the session was already terminated by an earlier action",
                )
            elif not isinstance(action, allowed):
                fb = ActionFeedback(
                    index, FeedbackStatus.WRONG_TOOLSET,
                    f"{type(action).__name__} is not available in this toolset",
                )
            elif isinstance(action, PlaceByFieldName):
                fb = place_by_field_name(
                    canvas, action.field_name, action.value,
                    localization_backend, action_index=index,
                )
            else:
                fb = apply_action(canvas, action, action_index=index)
            feedback_by_index[index] = fb

        round_feedback = [feedback_by_index[k] for k in sorted(feedback_by_index)]
        actions_json = [
            dict(action_to_json(action), action_index=index)
            for index, action in indexed_actions
        ]
        transcript.rounds.append(
            RoundRecord(
                request_digest=request.digest(),
                response_text=response.text,
                actions=actions_json,
                feedback=round_feedback,
            )
        )
        history.append(round_feedback)

        if canvas.terminated:
            break
        if config.mode is Mode.ITERATIVE and not indexed_actions:
            break

    transcript.terminated_early = canvas.terminated
    transcript.wall_time_s = time.monotonic() - started
    return canvas, transcript


@dataclass
class EpisodeResult:
    doc: FormDocument
    persona: Persona
    canvas: Canvas
    transcript: Transcript


def run_benchmark(
    docs: Sequence[FormDocument],
    persona_for_doc: Mapping[str, Persona],
    config: RunConfig,
    model_client,
    localization_backend=None,
) -> List[EpisodeResult]:
    """Run every document's episode, in parallel across documents.

    Results come back sorted by doc_id regardless of completion order, so
    downstream reports are deterministic.  An episode that raises is
    recorded as failed rather than aborting the whole run.
    """
    ordered = sorted(docs, key=lambda d: d.doc_id)
    missing = [d.doc_id for d in ordered if d.doc_id not in persona_for_doc]
    if missing:
        raise ConfigurationError(f"no persona assigned for documents: {missing}")

    def one(doc: FormDocument) -> EpisodeResult:
        persona = persona_for_doc[doc.doc_id]
        try:
            canvas, transcript = run_episode(
                doc, persona, config, model_client, localization_backend
            )
        except ConfigurationError:
            raise
        except Exception as exc:  # defensive: a failed episode must not kill the run
            canvas = new_canvas(doc.image, doc_id=doc.doc_id,
                                font_height_frac=config.font_height_frac)
            transcript = Transcript(
                doc_id=doc.doc_id, persona_id=persona.persona_id,
                failed=True, failure_reason=f"{type(exc).__name__}: {exc}",
            )
        return EpisodeResult(doc, persona, canvas, transcript)

    workers = config.parallelism or os.cpu_count() or 1
    if workers <= 1 or len(ordered) <= 1:
        return [one(doc) for doc in ordered]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, ordered))


# -- cost ------------------------------------------------------------------------


@dataclass(frozen=True)
class CostReport:
    usd_total: float
    usd_per_thousand_fields: float
    fields_attempted: int

    def to_json(self) -> dict:
        return {
            "usd_total": self.usd_total,
            "usd_per_thousand_fields": self.usd_per_thousand_fields,
            "fields_attempted": self.fields_attempted,
        }


def compute_cost(
    transcripts: Sequence[Transcript],
    price_per_input_token: float,
    price_per_output_token: float,
    fields: int,
) -> CostReport:
    """Sum token costs over transcripts, normalized per thousand fields."""
    if fields <= 0:
        raise EvaluationInputError(
            "cost per thousand fields is undefined for a zero-field run"
        )
    usd_total = sum(
        t.input_tokens * price_per_input_token
        + t.output_tokens * price_per_output_token
        for t in transcripts
    )
    return CostReport(
        usd_total=usd_total,
        usd_per_thousand_fields=1000.0 * usd_total / fields,
        fields_attempted=fields,
    )
