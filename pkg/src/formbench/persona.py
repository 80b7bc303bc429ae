"""Personas (fact tables plus optional source-document images) and the
declarative correctness language that judges a filled value against them.

A correctness spec is a small serializable description — exact match,
normalized match, template instantiation, checkbox mark, enumerated choice,
date equivalence, or a disjunction of those — instead of arbitrary code, so
field specs can live inside corpus annotation files and be audited.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from formbench import imgio
from formbench.errors import ConfigurationError, UnsatisfiableSpecError

# Characters removed by the strip_punctuation normalization.
PUNCTUATION_CHARS = ".,;:()-/"

# Date formats accepted by default: the canonical prompt format plus the
# dash-separated variant.  strptime is lenient about zero padding, so
# "3/5/2024" parses under the first pattern as well.
DEFAULT_DATE_FORMATS: Tuple[str, ...] = ("%m/%d/%Y", "%m-%d-%Y")

_TEMPLATE_PLACEHOLDER = re.compile(r"\{([^{}]+)\}")


class CorrectnessKind(Enum):
    EXACT = "EXACT"
    NORMALIZED = "NORMALIZED"
    TEMPLATE = "TEMPLATE"
    CHECKBOX = "CHECKBOX"
    ENUM_CHOICE = "ENUM_CHOICE"
    DATE = "DATE"
    ANY_OF = "ANY_OF"


@dataclass(frozen=True)
class NormalizationFlags:
    """Which normalizations apply before comparing non-exact values."""

    case_insensitive: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True


def normalize_text(text: str, flags: NormalizationFlags = NormalizationFlags()) -> str:
    """Apply the enabled normalizations. Idempotent for any flag combination."""
    out = text
    if flags.case_insensitive:
        out = out.lower()
    if flags.strip_punctuation:
        out = "".join(ch for ch in out if ch not in PUNCTUATION_CHARS)
    if flags.collapse_whitespace:
        out = " ".join(out.split())
    return out


@dataclass(frozen=True)
class CorrectnessSpec:
    """Declarative description of what counts as a correct filled value."""

    kind: CorrectnessKind
    fact_keys: Tuple[str, ...] = ()
    template: Optional[str] = None
    normalization: NormalizationFlags = field(default_factory=NormalizationFlags)
    accepted_formats: Optional[Tuple[str, ...]] = None
    choices: Optional[Tuple[str, ...]] = None
    children: Tuple["CorrectnessSpec", ...] = ()

    def __post_init__(self) -> None:
        if self.kind is CorrectnessKind.TEMPLATE:
            if self.template is None:
                raise ValueError("TEMPLATE spec requires a template string")
            referenced = set(_TEMPLATE_PLACEHOLDER.findall(self.template))
            extra = referenced - set(self.fact_keys)
            if extra:
                raise ValueError(
                    f"template references fact keys not in fact_keys: {sorted(extra)}"
                )
        if self.kind is CorrectnessKind.ANY_OF and len(self.children) < 2:
            raise ValueError("ANY_OF spec requires at least 2 child specs")
        if self.kind in (
            CorrectnessKind.EXACT,
            CorrectnessKind.NORMALIZED,
            CorrectnessKind.ENUM_CHOICE,
            CorrectnessKind.DATE,
        ) and not self.fact_keys:
            raise ValueError(f"{self.kind.value} spec requires at least one fact key")

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.fact_keys:
            out["fact_keys"] = list(self.fact_keys)
        if self.template is not None:
            out["template"] = self.template
        if self.normalization != NormalizationFlags():
            out["normalization"] = {
                "case_insensitive": self.normalization.case_insensitive,
                "strip_punctuation": self.normalization.strip_punctuation,
                "collapse_whitespace": self.normalization.collapse_whitespace,
            }
        if self.accepted_formats is not None:
            out["accepted_formats"] = list(self.accepted_formats)
        if self.choices is not None:
            out["choices"] = list(self.choices)
        if self.children:
            out["children"] = [child.to_json() for child in self.children]
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "CorrectnessSpec":
        norm = data.get("normalization")
        flags = (
            NormalizationFlags(
                case_insensitive=bool(norm.get("case_insensitive", True)),
                strip_punctuation=bool(norm.get("strip_punctuation", True)),
                collapse_whitespace=bool(norm.get("collapse_whitespace", True)),
            )
            if norm is not None
            else NormalizationFlags()
        )
        return cls(
            kind=CorrectnessKind(data["kind"]),
            fact_keys=tuple(data.get("fact_keys", ())),
            template=data.get("template"),
            normalization=flags,
            accepted_formats=(
                tuple(data["accepted_formats"]) if "accepted_formats" in data else None
            ),
            choices=tuple(data["choices"]) if "choices" in data else None,
            children=tuple(cls.from_json(c) for c in data.get("children", ())),
        )


@dataclass(frozen=True)
class Persona:
    """A user identity: fact table plus optional completed-form source images.

    ``source_images`` pairs each image with the doc_id it was rendered from;
    ``covered_fact_keys`` names the facts whose values are visible in those
    images (and can therefore be omitted from the text lines in IMAGE mode).
    """

    persona_id: str
    facts: Mapping[str, str]
    covered_fact_keys: frozenset = frozenset()
    source_images: Tuple[Tuple[str, np.ndarray], ...] = ()

    @property
    def rendered_lines(self) -> Tuple[str, ...]:
        """Display lines, one per fact, in fact-table order."""
        return tuple(render_fact_line(k, v) for k, v in self.facts.items())


def render_fact_line(fact_key: str, value: str) -> str:
    """Render one fact as a possessive-chain display line.

    ("user.bank.name", "KeyBank") → "The user's bank's name is: KeyBank".
    Underscores in key segments become spaces.
    """
    words = [seg.replace("_", " ") for seg in fact_key.split(".") if seg]
    if not words:
        raise ValueError("fact key must be non-empty")
    chain = "'s ".join(words)
    return f"The {chain} is: {value}"


class PersonaMode(Enum):
    TEXT = "TEXT"
    IMAGE = "IMAGE"


def render_persona_prompt(
    persona: Persona, mode: PersonaMode
) -> Tuple[str, list]:
    """Return (prompt text, image list) for the chosen persona presentation.

    TEXT mode emits every fact line and no images.  IMAGE mode emits the
    source images plus only the lines for facts NOT covered by those images.
    """
    if mode is PersonaMode.TEXT:
        return "\n".join(persona.rendered_lines), []
    if not persona.source_images:
        raise ConfigurationError(
            f"persona {persona.persona_id!r} has no source images; "
            "IMAGE mode requires at least one"
        )
    lines = [
        render_fact_line(k, v)
        for k, v in persona.facts.items()
        if k not in persona.covered_fact_keys
    ]
    images = [img for _doc_id, img in persona.source_images]
    return "\n".join(lines), images


# -- correctness evaluation -----------------------------------------------


def _require_fact(persona: Persona, key: str) -> str:
    try:
        return persona.facts[key]
    except KeyError:
        raise UnsatisfiableSpecError(
            f"persona {persona.persona_id!r} is missing fact {key!r}"
        ) from None


def instantiate_template(template: str, persona: Persona) -> str:
    """Substitute every {fact_key} placeholder with the persona's value."""

    def sub(match: "re.Match[str]") -> str:
        return _require_fact(persona, match.group(1))

    return _TEMPLATE_PLACEHOLDER.sub(sub, template)


def _parse_date(text: str, formats: Sequence[str]) -> Optional[datetime]:
    stripped = text.strip()
    for fmt in formats:
        try:
            return datetime.strptime(stripped, fmt)
        except ValueError:
            continue
    return None


def evaluate_correctness(
    spec: CorrectnessSpec, input_text: str, persona: Persona
) -> bool:
    """Judge ``input_text`` against the spec under the persona's facts.

    Deterministic and total once the persona supplies every referenced fact;
    a missing fact raises UnsatisfiableSpecError (a corpus/persona mismatch,
    never a graded "false").
    """
    kind = spec.kind
    flags = spec.normalization

    if kind is CorrectnessKind.EXACT:
        return input_text == _require_fact(persona, spec.fact_keys[0])

    if kind is CorrectnessKind.NORMALIZED:
        fact = _require_fact(persona, spec.fact_keys[0])
        return normalize_text(input_text, flags) == normalize_text(fact, flags)

    if kind is CorrectnessKind.TEMPLATE:
        expected = instantiate_template(spec.template or "", persona)
        return normalize_text(input_text, flags) == normalize_text(expected, flags)

    if kind is CorrectnessKind.CHECKBOX:
        return normalize_text(input_text, flags) == "x"

    if kind is CorrectnessKind.ENUM_CHOICE:
        fact = _require_fact(persona, spec.fact_keys[0])
        return normalize_text(input_text, flags) == normalize_text(fact, flags)

    if kind is CorrectnessKind.DATE:
        fact = _require_fact(persona, spec.fact_keys[0])
        formats = spec.accepted_formats or DEFAULT_DATE_FORMATS
        expected = _parse_date(fact, formats)
        if expected is None:
            raise UnsatisfiableSpecError(
                f"fact {spec.fact_keys[0]!r}={fact!r} does not parse as a date "
                f"under accepted formats {list(formats)}"
            )
        got = _parse_date(input_text, formats)
        return got is not None and got.date() == expected.date()

    if kind is CorrectnessKind.ANY_OF:
        unsatisfiable = 0
        for child in spec.children:
            try:
                if evaluate_correctness(child, input_text, persona):
                    return True
            except UnsatisfiableSpecError:
                unsatisfiable += 1
        if unsatisfiable == len(spec.children):
            raise UnsatisfiableSpecError(
                "no child of ANY_OF spec is satisfiable for persona "
                f"{persona.persona_id!r}"
            )
        return False

    raise ValueError(f"unknown correctness kind: {kind!r}")


def spec_witness(spec: CorrectnessSpec, persona: Persona) -> str:
    """Produce one input string the spec accepts for this persona.

    Used for the corpus-load satisfiability check and by scripted perfect
    agents.  Raises UnsatisfiableSpecError when no witness exists.
    """
    kind = spec.kind
    if kind in (CorrectnessKind.EXACT, CorrectnessKind.NORMALIZED, CorrectnessKind.ENUM_CHOICE):
        return _require_fact(persona, spec.fact_keys[0])
    if kind is CorrectnessKind.TEMPLATE:
        return instantiate_template(spec.template or "", persona)
    if kind is CorrectnessKind.CHECKBOX:
        return "x"
    if kind is CorrectnessKind.DATE:
        fact = _require_fact(persona, spec.fact_keys[0])
        formats = spec.accepted_formats or DEFAULT_DATE_FORMATS
        parsed = _parse_date(fact, formats)
        if parsed is None:
            raise UnsatisfiableSpecError(
                f"fact {spec.fact_keys[0]!r}={fact!r} does not parse as a date"
            )
        return parsed.strftime("%m/%d/%Y")
    if kind is CorrectnessKind.ANY_OF:
        last_error: Optional[UnsatisfiableSpecError] = None
        for child in spec.children:
            try:
                witness = spec_witness(child, persona)
                if evaluate_correctness(child, witness, persona):
                    return witness
            except UnsatisfiableSpecError as exc:
                last_error = exc
        raise last_error or UnsatisfiableSpecError("ANY_OF spec has no witness")
    raise ValueError(f"unknown correctness kind: {kind!r}")


def check_spec_satisfiable(spec: CorrectnessSpec, persona: Persona) -> None:
    """Raise UnsatisfiableSpecError unless some input satisfies the spec."""
    witness = spec_witness(spec, persona)
    if not evaluate_correctness(spec, witness, persona):
        raise UnsatisfiableSpecError(
            f"witness {witness!r} rejected by its own spec for persona "
            f"{persona.persona_id!r}"
        )
    if spec.kind is CorrectnessKind.ENUM_CHOICE and spec.choices:
        fact = normalize_text(_require_fact(persona, spec.fact_keys[0]), spec.normalization)
        normalized_choices = {normalize_text(c, spec.normalization) for c in spec.choices}
        if fact not in normalized_choices:
            raise UnsatisfiableSpecError(
                f"persona {persona.persona_id!r} designates {fact!r}, which is "
                f"not among the spec's choices {list(spec.choices)}"
            )


# -- persona file I/O -------------------------------------------------------


def persona_to_json(persona: Persona, image_paths: Sequence[str] = ()) -> dict:
    """Serialize a persona; ``image_paths`` lists where its images were saved."""
    return {
        "persona_id": persona.persona_id,
        "facts": dict(persona.facts),
        "covered_fact_keys": sorted(persona.covered_fact_keys),
        "source_images": list(image_paths),
    }


def save_persona(persona: Persona, path: Path) -> None:
    """Write a persona JSON file, saving source images as siblings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_paths = []
    for doc_id, image in persona.source_images:
        rel = f"{persona.persona_id}_{doc_id}.png"
        imgio.save_png(image, path.parent / rel)
        image_paths.append(rel)
    path.write_text(
        json.dumps(persona_to_json(persona, image_paths), indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )


def load_persona(path: Path) -> Persona:
    """Load a persona JSON file; image paths resolve relative to the file."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    images = []
    for rel in data.get("source_images", ()):
        img_path = path.parent / rel
        doc_id = Path(rel).stem
        prefix = f"{data['persona_id']}_"
        if doc_id.startswith(prefix):
            doc_id = doc_id[len(prefix):]
        images.append((doc_id, imgio.load_png(img_path)))
    return Persona(
        persona_id=data["persona_id"],
        facts=dict(data["facts"]),
        covered_fact_keys=frozenset(data.get("covered_fact_keys", ())),
        source_images=tuple(images),
    )


def with_source_image(persona: Persona, doc_id: str, image: np.ndarray,
                      covered: Iterable[str]) -> Persona:
    """Return a copy of the persona carrying one more source image."""
    return replace(
        persona,
        source_images=persona.source_images + ((doc_id, image),),
        covered_fact_keys=persona.covered_fact_keys | frozenset(covered),
    )
