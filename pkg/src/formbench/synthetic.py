"""Deterministic synthetic corpus: loan-application-style forms with known
field specs, four personas with source images, and filled/empty variants.

This is the bundled fixture corpus the offline test and acceptance suites
run against: every value is generated, layout constants are fixed, and the
form/field counts are importable constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from formbench import editor, imgio
from formbench.corpus import (
    FieldKind,
    FieldSpec,
    FormDocument,
    SourceDataset,
    Split,
    Word,
    save_document,
)
from formbench.geometry import BBox
from formbench.persona import (
    CorrectnessKind,
    CorrectnessSpec,
    Persona,
    render_fact_line,
    save_persona,
    spec_witness,
)

PAGE_WIDTH = 1000
PAGE_HEIGHT = 1400

LABEL_X = 0.05
LABEL_FONT_FRAC = 0.014
ROW_STEP = 0.04
FIRST_ROW_Y = 0.10

# Facts whose values are deliberately left off the rendered source images,
# so IMAGE persona mode still has text lines to emit.
UNCOVERED_FACT_KEYS = ("user.middle_name", "office.reference_code")

PERSONA_TABLE: Tuple[Dict[str, str], ...] = (
    {
        "user.first_name": "Avery",
        "user.middle_name": "Jordan",
        "user.last_name": "Miller",
        "user.birth_date": "03/14/1988",
        "user.phone": "555-301-2214",
        "user.email": "avery.miller@example.com",
        "user.street_address": "214 Cedar Lane",
        "user.city": "Springfield",
        "user.state": "OH",
        "user.bank.name": "KeyBank",
        "user.account_type": "Checking",
        "user.signing_date": "06/01/2024",
        "office.reference_code": "A-1102",
    },
    {
        "user.first_name": "Blake",
        "user.middle_name": "Casey",
        "user.last_name": "Nguyen",
        "user.birth_date": "11/02/1979",
        "user.phone": "555-887-4410",
        "user.email": "blake.nguyen@example.com",
        "user.street_address": "87 Willow Court",
        "user.city": "Riverton",
        "user.state": "CO",
        "user.bank.name": "First National Bank",
        "user.account_type": "Savings",
        "user.signing_date": "04/17/2024",
        "office.reference_code": "B-2210",
    },
    {
        "user.first_name": "Carmen",
        "user.middle_name": "Riley",
        "user.last_name": "Ortiz",
        "user.birth_date": "07/23/1992",
        "user.phone": "555-442-9083",
        "user.email": "carmen.ortiz@example.com",
        "user.street_address": "1530 Birch Avenue",
        "user.city": "Lakewood",
        "user.state": "WA",
        "user.bank.name": "Harbor Credit Union",
        "user.account_type": "Checking",
        "user.signing_date": "02/08/2024",
        "office.reference_code": "C-3305",
    },
    {
        "user.first_name": "Devon",
        "user.middle_name": "Harper",
        "user.last_name": "Smith",
        "user.birth_date": "01/30/1985",
        "user.phone": "555-679-1152",
        "user.email": "devon.smith@example.com",
        "user.street_address": "960 Aspen Drive",
        "user.city": "Fairview",
        "user.state": "TN",
        "user.bank.name": "Summit Savings Bank",
        "user.account_type": "Savings",
        "user.signing_date": "09/26/2024",
        "office.reference_code": "D-4408",
    },
)


def _normalized(keys: Sequence[str]) -> CorrectnessSpec:
    return CorrectnessSpec(CorrectnessKind.NORMALIZED, fact_keys=tuple(keys))


def _signature_spec() -> CorrectnessSpec:
    short = CorrectnessSpec(
        CorrectnessKind.TEMPLATE,
        fact_keys=("user.first_name", "user.last_name"),
        template="{user.first_name} {user.last_name}",
    )
    full = CorrectnessSpec(
        CorrectnessKind.TEMPLATE,
        fact_keys=("user.first_name", "user.middle_name", "user.last_name"),
        template="{user.first_name} {user.middle_name} {user.last_name}",
    )
    return CorrectnessSpec(CorrectnessKind.ANY_OF, children=(short, full))


@dataclass(frozen=True)
class _Row:
    section: Optional[str]  # section header printed above this row, if any
    label: str
    slug: str
    kind: FieldKind
    make_spec: Callable[[], CorrectnessSpec]
    expected_nonempty: bool = True
    ancestors: Tuple[str, ...] = ()


_ROWS: Tuple[_Row, ...] = (
    _Row("Applicant Information", "First Name:", "first_name", FieldKind.TEXT,
         lambda: _normalized(["user.first_name"]),
         ancestors=("Applicant Information",)),
    _Row(None, "Middle Name:", "middle_name", FieldKind.TEXT,
         lambda: _normalized(["user.middle_name"]),
         ancestors=("Applicant Information",)),
    _Row(None, "Last Name:", "last_name", FieldKind.TEXT,
         lambda: _normalized(["user.last_name"]),
         ancestors=("Applicant Information",)),
    _Row(None, "Full Name:", "full_name", FieldKind.TEXT,
         lambda: CorrectnessSpec(
             CorrectnessKind.TEMPLATE,
             fact_keys=("user.first_name", "user.middle_name", "user.last_name"),
             template="{user.first_name} {user.middle_name} {user.last_name}",
         ),
         ancestors=("Applicant Information",)),
    _Row(None, "Date of Birth:", "birth_date", FieldKind.TEXT,
         lambda: CorrectnessSpec(CorrectnessKind.DATE, fact_keys=("user.birth_date",)),
         ancestors=("Applicant Information",)),
    _Row(None, "Phone Number:", "phone", FieldKind.TEXT,
         lambda: _normalized(["user.phone"]),
         ancestors=("Applicant Information",)),
    _Row(None, "Email Address:", "email", FieldKind.TEXT,
         lambda: CorrectnessSpec(CorrectnessKind.EXACT, fact_keys=("user.email",)),
         ancestors=("Applicant Information",)),
    _Row(None, "Street Address:", "street_address", FieldKind.TEXT,
         lambda: _normalized(["user.street_address"]),
         ancestors=("Applicant Information",)),
    _Row(None, "City:", "city", FieldKind.TEXT,
         lambda: _normalized(["user.city"]),
         ancestors=("Applicant Information",)),
    _Row(None, "State:", "state", FieldKind.TEXT,
         lambda: _normalized(["user.state"]),
         ancestors=("Applicant Information",)),
    _Row("Account Details", "Bank Name:", "bank_name", FieldKind.TEXT,
         lambda: _normalized(["user.bank.name"]),
         ancestors=("Account Details",)),
    _Row(None, "Account Type:", "account_type", FieldKind.TEXT,
         lambda: CorrectnessSpec(
             CorrectnessKind.ENUM_CHOICE,
             fact_keys=("user.account_type",),
             choices=("Checking", "Savings"),
         ),
         ancestors=("Account Details",)),
    _Row(None, "US Citizen:", "us_citizen", FieldKind.CHECKBOX,
         lambda: CorrectnessSpec(CorrectnessKind.CHECKBOX),
         ancestors=("Account Details",)),
    _Row(None, "Joint Account:", "joint_account", FieldKind.CHECKBOX,
         lambda: CorrectnessSpec(CorrectnessKind.CHECKBOX),
         ancestors=("Account Details",)),
    _Row("Authorization", "Applicant Signature:", "signature", FieldKind.SIGNATURE,
         lambda: _signature_spec(),
         ancestors=("Authorization",)),
    _Row(None, "Date Signed:", "signing_date", FieldKind.TEXT,
         lambda: CorrectnessSpec(CorrectnessKind.DATE, fact_keys=("user.signing_date",)),
         ancestors=("Authorization",)),
    _Row("Office Use Only", "Reference Code:", "reference_code", FieldKind.TEXT,
         lambda: CorrectnessSpec(
             CorrectnessKind.EXACT, fact_keys=("office.reference_code",)
         ),
         expected_nonempty=False,
         ancestors=("Office Use Only",)),
)

FIELDS_PER_FORM = len(_ROWS)  # 17
DEFAULT_FORM_COUNT = 4
KNOWN_TEST_FORMS = DEFAULT_FORM_COUNT
KNOWN_TEST_FIELDS = DEFAULT_FORM_COUNT * FIELDS_PER_FORM


def _row_y(index: int) -> float:
    """Vertical center of row ``index``, accounting for section header rows."""
    headers_before = sum(1 for r in _ROWS[: index + 1] if r.section is not None)
    return FIRST_ROW_Y + (index + headers_before) * ROW_STEP


def _input_bbox(row: _Row, y: float) -> BBox:
    if row.kind is FieldKind.CHECKBOX:
        return BBox(0.32, y - 0.011, 0.35, y + 0.011)
    if row.kind is FieldKind.SIGNATURE:
        return BBox(0.32, y - 0.014, 0.75, y + 0.014)
    return BBox(0.32, y - 0.012, 0.78, y + 0.012)


def _label_words(label: str, y: float) -> List[Word]:
    """Approximate per-word boxes for a row label, fixed-advance metrics."""
    char_w = 0.6 * LABEL_FONT_FRAC * PAGE_HEIGHT / PAGE_WIDTH
    half_h = LABEL_FONT_FRAC / 2.0
    words = []
    x = LABEL_X
    for token in label.split():
        w = max(char_w, char_w * len(token))
        words.append(Word(token, BBox(x, y - half_h, min(1.0, x + w), y + half_h)))
        x += w + char_w
    return words


def _background(kind: str) -> np.ndarray:
    if kind == "white":
        return np.full((PAGE_HEIGHT, PAGE_WIDTH, 3), 255, dtype=np.uint8)
    if kind == "gradient":
        ramp = np.linspace(215.0, 255.0, PAGE_WIDTH)
        row = np.floor(ramp + 0.5).astype(np.uint8)
        return np.repeat(row[None, :, None], PAGE_HEIGHT, axis=0).repeat(3, axis=2).copy()
    raise ValueError(f"unknown background kind: {kind!r}")


def _draw_form_base(background: str, title: str) -> Tuple[np.ndarray, List[Word]]:
    """Draw labels, underlines, and checkbox outlines; collect word boxes."""
    base = _background(background)
    pil = imgio.to_image(base)
    draw = ImageDraw.Draw(pil)
    label_px = max(8, int(round(LABEL_FONT_FRAC * PAGE_HEIGHT)))
    label_font = ImageFont.load_default(size=label_px)
    title_font = ImageFont.load_default(size=label_px + 8)
    header_font = ImageFont.load_default(size=label_px + 4)

    draw.text((int(LABEL_X * PAGE_WIDTH), int(0.03 * PAGE_HEIGHT)), title,
              fill=(0, 0, 0), font=title_font)

    words: List[Word] = []
    for index, row in enumerate(_ROWS):
        y = _row_y(index)
        py = int(round(y * PAGE_HEIGHT))
        if row.section is not None:
            header_y = y - ROW_STEP
            draw.text(
                (int(LABEL_X * PAGE_WIDTH), int(round(header_y * PAGE_HEIGHT)) - label_px),
                row.section, fill=(0, 0, 0), font=header_font,
            )
            words.extend(_label_words(row.section, header_y))
        draw.text((int(LABEL_X * PAGE_WIDTH), py - label_px // 2), row.label,
                  fill=(0, 0, 0), font=label_font)
        words.extend(_label_words(row.label, y))

        bbox = _input_bbox(row, y)
        px0 = int(round(bbox.x0 * PAGE_WIDTH))
        px1 = int(round(bbox.x1 * PAGE_WIDTH))
        py0 = int(round(bbox.y0 * PAGE_HEIGHT))
        py1 = int(round(bbox.y1 * PAGE_HEIGHT))
        if row.kind is FieldKind.CHECKBOX:
            # Outline sits 3 px outside the input area so redaction (which
            # interpolates from the columns just outside the box) sees
            # background, not ink.
            draw.rectangle([px0 - 3, py0 - 3, px1 + 2, py1 + 2],
                           outline=(0, 0, 0), width=1)
        else:
            draw.line([(px0, py1 + 3), (px1, py1 + 3)], fill=(0, 0, 0), width=1)
    return imgio.to_array(pil), words


def build_fields(doc_id: str) -> List[FieldSpec]:
    """The per-document field table (identical layout for every doc)."""
    fields = []
    for index, row in enumerate(_ROWS):
        y = _row_y(index)
        name = row.label.rstrip(":")
        fields.append(
            FieldSpec(
                field_id=f"{doc_id}.{row.slug}",
                name=name,
                hierarchical_name=" | ".join(list(row.ancestors) + [name]),
                bbox=_input_bbox(row, y),
                kind=row.kind,
                correctness=row.make_spec(),
                expected_nonempty=row.expected_nonempty,
            )
        )
    return fields


def build_personas(with_images: bool = True) -> List[Persona]:
    """The four shipped personas, optionally carrying rendered source images."""
    personas = []
    for i, facts in enumerate(PERSONA_TABLE):
        persona_id = f"persona-{i}"
        covered = frozenset(k for k in facts if k not in UNCOVERED_FACT_KEYS)
        source_images: Tuple[Tuple[str, np.ndarray], ...] = ()
        if with_images:
            image = _render_source_image(facts, covered)
            source_images = ((f"source-{i}", image),)
        personas.append(
            Persona(
                persona_id=persona_id,
                facts=dict(facts),
                covered_fact_keys=covered if with_images else frozenset(),
                source_images=source_images,
            )
        )
    return personas


def _render_source_image(facts: Dict[str, str], covered: frozenset) -> np.ndarray:
    """A 'previously completed form' page showing the covered facts."""
    width, height = 1000, 700
    pil = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(pil)
    font = ImageFont.load_default(size=22)
    draw.text((50, 30), "Previously Completed Application", fill=(0, 0, 0),
              font=ImageFont.load_default(size=28))
    y = 90
    for key in facts:
        if key not in covered:
            continue
        draw.text((50, y), render_fact_line(key, facts[key]), fill=(16, 32, 128),
                  font=font)
        y += 34
    return imgio.to_array(pil)


def build_document(
    doc_id: str,
    persona: Persona,
    split: Split,
    filled: bool = False,
    background: str = "white",
) -> FormDocument:
    """Build one synthetic form, empty or filled in by ``persona``."""
    base, words = _draw_form_base(background, title=f"Account Application {doc_id}")
    fields = build_fields(doc_id)
    image = base
    if filled:
        canvas = editor.new_canvas(base, doc_id=doc_id)
        for spec in fields:
            if not spec.expected_nonempty:
                continue
            witness = spec_witness(spec.correctness, persona)
            kind = (editor.ItemKind.SIGNATURE if spec.kind is FieldKind.SIGNATURE
                    else editor.ItemKind.TEXT)
            cx = (spec.bbox.x0 + spec.bbox.x1) / 2.0
            cy = (spec.bbox.y0 + spec.bbox.y1) / 2.0
            editor.place_item(canvas, cx, cy, witness, kind,
                              font_height_frac=min(canvas.font_height_frac,
                                                   spec.bbox.height))
        image = editor.render(canvas)
    return FormDocument(
        doc_id=doc_id,
        image=image,
        width=PAGE_WIDTH,
        height=PAGE_HEIGHT,
        fields=fields,
        words=words,
        source_dataset=SourceDataset.SYNTHETIC,
        language="en",
        split=split,
        values_present=filled,
    )


def persona_assignment(doc_ids: Sequence[str], personas: Sequence[Persona]
                       ) -> Dict[str, str]:
    """Default assignment: sorted docs cycle through the personas."""
    return {
        doc_id: personas[i % len(personas)].persona_id
        for i, doc_id in enumerate(sorted(doc_ids))
    }


def build_corpus(
    filled: bool = False,
    background: str = "white",
    form_count: int = DEFAULT_FORM_COUNT,
    split: Split = Split.TEST,
    doc_prefix: str = "syn",
) -> Tuple[List[FormDocument], List[Persona], Dict[str, str]]:
    """Build the in-memory synthetic corpus with its persona assignment."""
    personas = build_personas()
    by_id = {p.persona_id: p for p in personas}
    doc_ids = [f"{doc_prefix}-{i:03d}" for i in range(form_count)]
    assignment = persona_assignment(doc_ids, personas)
    docs = [
        build_document(doc_id, by_id[assignment[doc_id]], split,
                       filled=filled, background=background)
        for doc_id in doc_ids
    ]
    return docs, personas, assignment


def write_corpus(
    out_dir: Path,
    filled: bool = False,
    background: str = "white",
    train_forms: int = DEFAULT_FORM_COUNT,
    test_forms: int = DEFAULT_FORM_COUNT,
) -> Dict[str, int]:
    """Write the synthetic corpus in the canonical layout.

    Produces <out>/SYNTHETIC/{train,test}/... plus <out>/personas/ with the
    four persona files and the doc→persona assignment map.  Returns the
    form/field counts written.
    """
    out_dir = Path(out_dir)
    personas = build_personas()
    assignment: Dict[str, str] = {}
    counts = {"train_forms": 0, "train_fields": 0,
              "test_forms": 0, "test_fields": 0}

    for split, prefix, n in (
        (Split.TRAIN, "syn-train", train_forms),
        (Split.TEST, "syn", test_forms),
    ):
        if n <= 0:
            continue
        docs, _personas, split_assignment = build_corpus(
            filled=filled, background=background, form_count=n,
            split=split, doc_prefix=prefix,
        )
        assignment.update(split_assignment)
        split_dir = out_dir / SourceDataset.SYNTHETIC.value / split.dirname
        for doc in docs:
            save_document(doc, split_dir)
        key = "train" if split is Split.TRAIN else "test"
        counts[f"{key}_forms"] += len(docs)
        counts[f"{key}_fields"] += sum(len(d.fields) for d in docs)

    personas_dir = out_dir / "personas"
    for persona in personas:
        save_persona(persona, personas_dir / f"{persona.persona_id}.json")
    (personas_dir / "assignment.json").write_text(
        json.dumps(assignment, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return counts
