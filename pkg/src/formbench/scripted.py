"""Deterministic scripted model clients.

These stand in for a live model when exercising the harness itself: a
perfect agent that fills every field with an accepted value at the field
center, plus adversarial agents that never terminate or never produce
parseable output.  All of them are plain (doc_id, round_index) -> str
callables suitable for ScriptedModelClient.
"""

from __future__ import annotations

import json
from typing import Callable, Dict, Mapping, Sequence

from formbench.agent import ScriptedModelClient, Toolset
from formbench.corpus import FieldKind, FormDocument
from formbench.errors import ConfigurationError
from formbench.geometry import center
from formbench.persona import Persona, spec_witness

ScriptFn = Callable[[str, int], str]


def _placement_payload(doc: FormDocument, persona: Persona,
                       toolset: Toolset) -> list:
    """One accepted-value placement per expected-nonempty field."""
    actions = []
    for spec in doc.fields:
        if not spec.expected_nonempty:
            continue
        value = spec_witness(spec.correctness, persona)
        if toolset is Toolset.FIELDFINDER:
            actions.append({
                "action": "PlaceByFieldName",
                "field_name": spec.hierarchical_name,
                "value": value,
            })
            continue
        c = center(spec.bbox)
        tag = ("SignOrInitial" if spec.kind is FieldKind.SIGNATURE
               else "PlaceText")
        actions.append({
            "action": tag,
            "cx": round(c.x, 6),
            "cy": round(c.y, 6),
            "value": value,
        })
    return actions


def perfect_script(
    docs: Sequence[FormDocument],
    persona_for_doc: Mapping[str, Persona],
    toolset: Toolset = Toolset.GT_COORDS,
) -> ScriptFn:
    """Fill every field with an accepted value, then terminate.

    Round 0 emits all placements; round 1 emits Terminate, so an iterative
    run ends after two rounds and a one-shot run captures all placements.
    """
    by_doc: Dict[str, list] = {}
    for doc in docs:
        persona = persona_for_doc.get(doc.doc_id)
        if persona is None:
            raise ConfigurationError(f"no persona assigned to {doc.doc_id!r}")
        by_doc[doc.doc_id] = _placement_payload(doc, persona, toolset)

    def script(doc_id: str, round_index: int) -> str:
        if doc_id not in by_doc:
            raise KeyError(f"no script for document {doc_id!r}")
        if round_index == 0:
            return json.dumps(by_doc[doc_id])
        return json.dumps([{"action": "Terminate"}])

    return script


def perfect_client(
    docs: Sequence[FormDocument],
    persona_for_doc: Mapping[str, Persona],
    toolset: Toolset = Toolset.GT_COORDS,
) -> ScriptedModelClient:
    return ScriptedModelClient(perfect_script(docs, persona_for_doc, toolset))


def relentless_placer_script() -> ScriptFn:
    """Valid placement every round, never Terminate.

    Exercises the round cap: the runner must stop at the configured maximum
    no matter how long the client keeps producing well-formed actions.
    """

    def script(doc_id: str, round_index: int) -> str:
        return json.dumps([{
            "action": "PlaceText",
            "cx": 0.5,
            "cy": 0.5,
            "value": f"round {round_index} text",
        }])

    return script


def malformed_script() -> ScriptFn:
    """Free prose with no JSON array, every round."""

    def script(doc_id: str, round_index: int) -> str:
        return (f"I believe the form {doc_id} should be filled carefully. "
                f"On reflection (round {round_index}) the best value is 42.")

    return script


def mixed_validity_script() -> ScriptFn:
    """A blend per round: one good placement, one out-of-bounds, one
    malformed element — for checking index-aligned feedback."""

    def script(doc_id: str, round_index: int) -> str:
        return json.dumps([
            {"action": "PlaceText", "cx": 0.25, "cy": 0.25, "value": "ok"},
            {"action": "PlaceText", "cx": 1.5, "cy": 0.5, "value": "outside"},
            {"action": "Hover", "cx": 0.5, "cy": 0.5},
        ])

    return script


def replay_map(
    docs: Sequence[FormDocument],
    persona_for_doc: Mapping[str, Persona],
    toolset: Toolset = Toolset.GT_COORDS,
    rounds: int = 2,
) -> Dict[str, str]:
    """Materialize the perfect script as a replay mapping (doc/round -> text)."""
    script = perfect_script(docs, persona_for_doc, toolset)
    table = {}
    for doc in docs:
        for round_index in range(rounds):
            table[f"{doc.doc_id}/{round_index}"] = script(doc.doc_id, round_index)
    return table
