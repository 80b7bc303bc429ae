"""Native-format loaders for public form-understanding datasets.

Each loader reads a dataset's own annotation layout, pairs question
entities with their linked answers, and emits FormDocument values whose
fields carry the answer's bounding box and an exact-match correctness spec
keyed into an auto-generated per-document persona (the original answer
strings are the source facts for these datasets).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from formbench import imgio
from formbench.corpus import (
    FieldKind,
    FieldSpec,
    FormDocument,
    SourceDataset,
    Split,
    Word,
)
from formbench.errors import IngestionError, MissingAssetError
from formbench.geometry import BBox, PixelBBox, normalize
from formbench.persona import CorrectnessKind, CorrectnessSpec, Persona

# Native split directory names used by the question/answer-linked layout.
QA_SPLIT_DIRS = {Split.TRAIN: "training_data", Split.TEST: "testing_data"}


def _pixel_bbox(box: Sequence, width: int, height: int) -> Optional[BBox]:
    """Convert a raw [x0, y0, x1, y1] pixel box; None when degenerate."""
    x0, y0, x1, y1 = (float(v) for v in box)
    # Clamp into the page, then reject boxes with no area.
    x0, x1 = max(0.0, min(x0, x1)), min(float(width), max(x0, x1))
    y0, y1 = max(0.0, min(y0, y1)), min(float(height), max(y0, y1))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return normalize(PixelBBox(int(x0), int(y0), int(x1), int(y1)), width, height)


def _entities_to_document(
    doc_id: str,
    entities: Sequence[Mapping],
    image_path: Path,
    source: SourceDataset,
    language: str,
    split: Split,
) -> FormDocument:
    """Build a FormDocument from question/answer entities with linking."""
    image = imgio.load_png(image_path)
    height, width = image.shape[:2]

    by_id: Dict[int, Mapping] = {}
    for ent in entities:
        by_id[int(ent["id"])] = ent

    words: List[Word] = []
    for ent in entities:
        for w in ent.get("words", ()):
            bbox = _pixel_bbox(w["box"], width, height)
            text = str(w.get("text", "")).strip()
            if bbox is not None and text:
                words.append(Word(text, bbox))

    fields: List[FieldSpec] = []
    seen_pairs = set()
    for ent in entities:
        for link in ent.get("linking", ()):
            qid, aid = int(link[0]), int(link[1])
            if (qid, aid) in seen_pairs:
                continue
            seen_pairs.add((qid, aid))
            question = by_id.get(qid)
            answer = by_id.get(aid)
            if question is None or answer is None:
                continue
            if question.get("label") != "question" or answer.get("label") != "answer":
                continue
            name = str(question.get("text", "")).strip()
            value = str(answer.get("text", "")).strip()
            bbox = _pixel_bbox(answer["box"], width, height)
            if not name or not value or bbox is None:
                continue
            field_id = f"{qid}_{aid}"
            fields.append(
                FieldSpec(
                    field_id=field_id,
                    name=name,
                    # These layouts are flat: no ancestor structure is
                    # annotated, so the hierarchical name is the name itself.
                    hierarchical_name=name,
                    bbox=bbox,
                    kind=FieldKind.TEXT,
                    correctness=CorrectnessSpec(
                        kind=CorrectnessKind.EXACT,
                        fact_keys=(f"field.{field_id}",),
                    ),
                    expected_nonempty=True,
                )
            )

    return FormDocument(
        doc_id=doc_id,
        image=image,
        width=width,
        height=height,
        fields=fields,
        words=words,
        source_dataset=source,
        language=language,
        split=split,
        values_present=True,
        image_path=str(image_path),
    )


def _persona_from_values(doc_id: str, values: Mapping[str, str]) -> Persona:
    """The auto-generated persona for a converted document: its facts are the
    original answer strings, keyed to match the exact-match specs produced at
    conversion time."""
    return Persona(persona_id=f"source-{doc_id}", facts=dict(values))


def load_funsd(root: Path, split: Optional[Split] = None
               ) -> Tuple[List[FormDocument], Dict[str, Persona]]:
    """Load the FUNSD-style native layout.

    Layout: <root>/{training_data,testing_data}/{annotations/*.json,
    images/*.png}; each JSON holds a "form" list of entities with id, text,
    box, label, linking, and words.  ``split=None`` loads every split that
    is present, tagging each document with its own.
    """
    root = Path(root)
    if split is None:
        docs: List[FormDocument] = []
        personas: Dict[str, Persona] = {}
        found = False
        for sp in (Split.TRAIN, Split.TEST):
            if not (root / QA_SPLIT_DIRS[sp] / "annotations").is_dir():
                continue
            split_docs, split_personas = load_funsd(root, sp)
            docs.extend(split_docs)
            personas.update(split_personas)
            found = True
        if not found:
            raise IngestionError(str(root), "no annotations found")
        return docs, personas
    split_dir = root / QA_SPLIT_DIRS[split]
    ann_dir = split_dir / "annotations"
    img_dir = split_dir / "images"
    if not ann_dir.is_dir():
        raise IngestionError(str(ann_dir), "no annotations found")
    docs: List[FormDocument] = []
    personas: Dict[str, Persona] = {}
    for ann_path in sorted(ann_dir.glob("*.json")):
        try:
            data = json.loads(ann_path.read_text(encoding="utf-8"))
            entities = data["form"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise IngestionError(str(ann_path), f"malformed annotation: {exc}") from exc
        doc_id = ann_path.stem
        image_path = img_dir / f"{doc_id}.png"
        if not image_path.exists():
            raise MissingAssetError(f"{ann_path}: image not found at {image_path}")
        try:
            doc = _entities_to_document(
                doc_id, entities, image_path, SourceDataset.FUNSD, "en", split
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(str(ann_path), f"malformed annotation: {exc}") from exc
        docs.append(doc)
        personas[doc_id] = _persona_from_values(
            doc_id, _answer_values(entities, doc)
        )
    return docs, personas


def _answer_values(entities: Sequence[Mapping], doc: FormDocument) -> Dict[str, str]:
    by_id = {int(e["id"]): e for e in entities}
    values: Dict[str, str] = {}
    for spec in doc.fields:
        _qid, aid = (int(part) for part in spec.field_id.split("_"))
        values[f"field.{spec.field_id}"] = str(by_id[aid].get("text", "")).strip()
    return values


def load_xfund(root: Path, split: Optional[Split] = None
               ) -> Tuple[List[FormDocument], Dict[str, Persona]]:
    """Load the XFUND-style native layout.

    Layout: <root>/<lang>/<lang>.{train,val}.json plus an images directory
    per language; the language tag comes from the subdirectory name.  Each
    JSON holds a "documents" list with img metadata and a "document" entity
    list shaped like the FUNSD entities.  ``split=None`` loads every split
    that is present, tagging each document with its own.
    """
    root = Path(root)
    if split is None:
        docs: List[FormDocument] = []
        personas: Dict[str, Persona] = {}
        found = False
        for sp in (Split.TRAIN, Split.TEST):
            if not _xfund_annotation_files(root, sp):
                continue
            split_docs, split_personas = load_xfund(root, sp)
            docs.extend(split_docs)
            personas.update(split_personas)
            found = True
        if not found:
            raise IngestionError(str(root), "no annotations found")
        return docs, personas
    split_tokens = {"train"} if split is Split.TRAIN else {"val", "test"}
    docs: List[FormDocument] = []
    personas: Dict[str, Persona] = {}
    found_any = False
    for lang_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        language = lang_dir.name or "und"
        for ann_path in sorted(lang_dir.glob("*.json")):
            stem_parts = ann_path.stem.split(".")
            if len(stem_parts) < 2 or stem_parts[-1] not in split_tokens:
                continue
            found_any = True
            try:
                data = json.loads(ann_path.read_text(encoding="utf-8"))
                documents = data["documents"]
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise IngestionError(str(ann_path), f"malformed annotation: {exc}") from exc
            for entry in documents:
                try:
                    fname = entry["img"]["fname"]
                    doc_id = entry.get("id") or Path(fname).stem
                    entities = entry["document"]
                except (KeyError, TypeError) as exc:
                    raise IngestionError(
                        str(ann_path), f"malformed document entry: {exc}"
                    ) from exc
                image_path = _find_image(lang_dir, fname)
                if image_path is None:
                    raise MissingAssetError(f"{ann_path}: image {fname!r} not found")
                try:
                    doc = _entities_to_document(
                        str(doc_id), entities, image_path,
                        SourceDataset.XFUND, language, split,
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise IngestionError(
                        str(ann_path), f"malformed annotation: {exc}"
                    ) from exc
                docs.append(doc)
                personas[doc.doc_id] = _persona_from_values(
                    doc.doc_id, _answer_values(entities, doc)
                )
    if not found_any:
        raise IngestionError(str(root), "no annotations found")
    return docs, personas


def _xfund_annotation_files(root: Path, split: Split) -> List[Path]:
    """Annotation files whose stem's split token matches ``split``."""
    if not root.is_dir():
        return []
    split_tokens = {"train"} if split is Split.TRAIN else {"val", "test"}
    matched: List[Path] = []
    for lang_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for ann_path in sorted(lang_dir.glob("*.json")):
            stem_parts = ann_path.stem.split(".")
            if len(stem_parts) >= 2 and stem_parts[-1] in split_tokens:
                matched.append(ann_path)
    return matched


def _find_image(lang_dir: Path, fname: str) -> Optional[Path]:
    for candidate in (lang_dir / fname, lang_dir / "images" / fname):
        if candidate.exists():
            return candidate
    return None


def load_native(root: Path, dataset: SourceDataset, split: Optional[Split] = None
                ) -> Tuple[List[FormDocument], Dict[str, Persona]]:
    """Dispatch to the right native loader; canonical-only sets have none."""
    if dataset is SourceDataset.FUNSD:
        return load_funsd(root, split)
    if dataset is SourceDataset.XFUND:
        return load_xfund(root, split)
    raise IngestionError(
        str(root),
        f"{dataset.value} has no native-format loader; supply the canonical schema",
    )
