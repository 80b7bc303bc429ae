"""Corpus handling: canonical annotated form documents on disk, ingestion,
value redaction into empty fillable forms, and dataset statistics.

On-disk layout is ``<root>/<dataset>/<split>/{annotations/*.json,
images/*.png}`` with one canonical JSON document per form.  Native-format
datasets are converted into this schema by :mod:`formbench.converters`;
everything downstream reads only the canonical form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Mapping, Optional, Sequence

import numpy as np

from formbench import imgio
from formbench._kernels import fill_rows_linear
from formbench.errors import (
    EmptyDatasetError,
    IngestionError,
    InvalidBoxError,
    InvalidSegmentError,
    MissingAssetError,
)
from formbench.geometry import BBox, boxes_disjoint, contains, denormalize
from formbench.geometry import center as bbox_center
from formbench.persona import CorrectnessSpec

HIERARCHY_SEPARATOR = " | "


class SourceDataset(Enum):
    AUTO_LOANS = "AUTO_LOANS"
    FUNSD = "FUNSD"
    XFUND = "XFUND"
    FORM_NLU = "FORM_NLU"
    SYNTHETIC = "SYNTHETIC"


class Split(Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"

    @property
    def dirname(self) -> str:
        return self.value.lower()


class FieldKind(Enum):
    TEXT = "TEXT"
    CHECKBOX = "CHECKBOX"
    SIGNATURE = "SIGNATURE"


@dataclass(frozen=True)
class Word:
    """One word-level annotation: its text and normalized box."""

    text: str
    bbox: BBox


@dataclass(frozen=True)
class FieldSpec:
    """A fillable region: where values go and what counts as correct there."""

    field_id: str
    name: str
    hierarchical_name: str
    bbox: BBox
    kind: FieldKind
    correctness: CorrectnessSpec
    expected_nonempty: bool = True

    def __post_init__(self) -> None:
        last = self.hierarchical_name.split(HIERARCHY_SEPARATOR)[-1]
        if last != self.name:
            raise ValueError(
                f"hierarchical_name {self.hierarchical_name!r} must end with "
                f"the field name {self.name!r}"
            )


@dataclass(eq=False)
class FormDocument:
    """One single-page form: image, field specs, and word annotations."""

    doc_id: str
    image: np.ndarray
    width: int
    height: int
    fields: List[FieldSpec]
    words: Optional[List[Word]] = None
    source_dataset: SourceDataset = SourceDataset.SYNTHETIC
    language: str = "en"
    split: Optional[Split] = None
    # True while the image still shows filled-in values (pre-redaction).
    values_present: bool = False
    image_path: Optional[str] = None

    def __post_init__(self) -> None:
        h, w = self.image.shape[:2]
        if (w, h) != (self.width, self.height):
            raise ValueError(
                f"doc {self.doc_id!r}: declared size {self.width}x{self.height} "
                f"does not match image {w}x{h}"
            )
        if self.source_dataset is SourceDataset.AUTO_LOANS:
            _check_disjoint_fields(self.doc_id, self.fields)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FormDocument):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.width == other.width
            and self.height == other.height
            and self.fields == other.fields
            and self.words == other.words
            and self.source_dataset == other.source_dataset
            and self.language == other.language
            and self.split == other.split
            and self.values_present == other.values_present
            and np.array_equal(self.image, other.image)
        )

    def field_by_id(self, field_id: str) -> FieldSpec:
        for spec in self.fields:
            if spec.field_id == field_id:
                return spec
        raise KeyError(field_id)


def _check_disjoint_fields(doc_id: str, fields: Sequence[FieldSpec]) -> None:
    for i, a in enumerate(fields):
        for b in fields[i + 1:]:
            if not boxes_disjoint(a.bbox, b.bbox):
                raise InvalidBoxError(
                    f"doc {doc_id!r}: fields {a.field_id!r} and {b.field_id!r} "
                    "overlap; this dataset requires pairwise-disjoint fields"
                )


@dataclass(frozen=True)
class DatasetStats:
    forms: int
    fields: int
    fields_per_form: float
    languages: int
    split: Split


# -- hierarchical names ------------------------------------------------------


def build_hierarchical_name(name: str, ancestors: Sequence[str] = ()) -> str:
    """Join ancestor labels (outermost first) and the field's own name.

    With no ancestors this is the identity, which makes it idempotent on
    already-hierarchical names.  Segments may not contain "|".
    """
    if not ancestors:
        return name
    for segment in list(ancestors) + [name]:
        if "|" in segment:
            raise InvalidSegmentError(
                f"segment {segment!r} contains the reserved separator character"
            )
    return HIERARCHY_SEPARATOR.join(list(ancestors) + [name])


# -- canonical schema I/O -----------------------------------------------------


def _field_to_json(spec: FieldSpec) -> dict:
    return {
        "field_id": spec.field_id,
        "name": spec.name,
        "hierarchical_name": spec.hierarchical_name,
        "bbox": spec.bbox.as_list(),
        "kind": spec.kind.value,
        "expected_nonempty": spec.expected_nonempty,
        "correctness": spec.correctness.to_json(),
    }


def _field_from_json(data: Mapping) -> FieldSpec:
    return FieldSpec(
        field_id=data["field_id"],
        name=data["name"],
        hierarchical_name=data["hierarchical_name"],
        bbox=BBox.from_list(data["bbox"]),
        kind=FieldKind(data["kind"]),
        correctness=CorrectnessSpec.from_json(data["correctness"]),
        expected_nonempty=bool(data["expected_nonempty"]),
    )


def document_to_json(doc: FormDocument, image_relpath: str) -> dict:
    out = {
        "doc_id": doc.doc_id,
        "image": image_relpath,
        "width": doc.width,
        "height": doc.height,
        "language": doc.language,
        "fields": [_field_to_json(f) for f in doc.fields],
        "values_present": doc.values_present,
    }
    if doc.words is not None:
        out["words"] = [{"text": w.text, "bbox": w.bbox.as_list()} for w in doc.words]
    return out


def save_document(doc: FormDocument, split_dir: Path) -> None:
    """Write one document (annotation JSON + PNG) under a split directory."""
    split_dir = Path(split_dir)
    annotations = split_dir / "annotations"
    images = split_dir / "images"
    annotations.mkdir(parents=True, exist_ok=True)
    images.mkdir(parents=True, exist_ok=True)
    image_rel = f"../images/{doc.doc_id}.png"
    imgio.save_png(doc.image, images / f"{doc.doc_id}.png")
    payload = json.dumps(document_to_json(doc, image_rel), indent=2, sort_keys=True)
    (annotations / f"{doc.doc_id}.json").write_text(payload + "\n", encoding="utf-8")


def load_document(
    annotation_path: Path,
    source_dataset: SourceDataset,
    split: Optional[Split] = None,
    language_override: Optional[str] = None,
) -> FormDocument:
    """Load one canonical annotation file and its image."""
    annotation_path = Path(annotation_path)
    try:
        data = json.loads(annotation_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IngestionError(str(annotation_path), f"unreadable annotation: {exc}") from exc

    try:
        image_rel = data["image"]
        image_path = (annotation_path.parent / image_rel).resolve()
        if not image_path.exists():
            raise MissingAssetError(
                f"{annotation_path}: image {image_rel!r} not found at {image_path}"
            )
        image = imgio.load_png(image_path)
        fields = [_field_from_json(f) for f in data["fields"]]
        words = None
        if "words" in data:
            words = [Word(w["text"], BBox.from_list(w["bbox"])) for w in data["words"]]
        return FormDocument(
            doc_id=data["doc_id"],
            image=image,
            width=int(data["width"]),
            height=int(data["height"]),
            fields=fields,
            words=words,
            source_dataset=source_dataset,
            language=language_override or data.get("language", "und"),
            split=split,
            values_present=bool(data.get("values_present", False)),
            image_path=str(image_path),
        )
    except MissingAssetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(str(annotation_path), f"malformed annotation: {exc}") from exc


def load_relation_dataset(
    root: Path,
    dataset: SourceDataset,
    split: Optional[Split] = None,
) -> List[FormDocument]:
    """Load a dataset from the canonical on-disk layout.

    ``root`` is the corpus root (containing ``<dataset>/<split>/...``).
    ``split=None`` loads every split present.  Native-format trees must
    first be converted (see formbench.converters / the convert command).
    """
    root = Path(root)
    dataset_dir = root / dataset.value
    if not dataset_dir.is_dir():
        raise IngestionError(str(dataset_dir), "dataset directory not found")
    splits = [split] if split is not None else [Split.TRAIN, Split.TEST]
    docs: List[FormDocument] = []
    for sp in splits:
        ann_dir = dataset_dir / sp.dirname / "annotations"
        if not ann_dir.is_dir():
            continue
        for ann_path in sorted(ann_dir.glob("*.json")):
            docs.append(load_document(ann_path, dataset, split=sp))
    if not docs:
        raise EmptyDatasetError(
            f"no annotations found for {dataset.value} under {dataset_dir}"
            + (f" (split {split.value})" if split else "")
        )
    return docs


# -- redaction ----------------------------------------------------------------


def _median_border_color(region: np.ndarray) -> np.ndarray:
    """Per-channel median of a region's outermost 1-pixel frame."""
    h, w = region.shape[:2]
    parts = [region[0, :, :], region[h - 1, :, :]]
    if h > 2:
        parts.extend([region[1:h - 1, 0, :], region[1:h - 1, w - 1, :]])
    frame = np.concatenate(parts, axis=0)
    return np.median(frame, axis=0).astype(region.dtype)


def redact_values(doc: FormDocument) -> np.ndarray:
    """Synthesize an empty fillable form by erasing every field's contents.

    Inside each field box, every pixel row is re-drawn by linear
    interpolation between the columns immediately left and right of the box
    (replicating the single neighbor at a page margin).  A box spanning the
    full page width falls back to the median color of its 1-pixel border
    frame.  Pixels outside all boxes are untouched.
    """
    out = doc.image.copy()
    height, width = out.shape[:2]
    for spec in doc.fields:
        pb = denormalize(spec.bbox, width, height)
        if pb.px0 == 0 and pb.px1 == width:
            region = out[pb.py0:pb.py1, pb.px0:pb.px1, :]
            out[pb.py0:pb.py1, pb.px0:pb.px1, :] = _median_border_color(region)
        else:
            fill_rows_linear(out, pb.px0, pb.py0, pb.px1, pb.py1)
    return out


# -- statistics ----------------------------------------------------------------


def dataset_stats(docs: Sequence[FormDocument], split: Split) -> DatasetStats:
    """Form/field counts and the fields-per-form ratio for one split."""
    selected = [d for d in docs if d.split is None or d.split == split]
    if not selected:
        raise EmptyDatasetError(f"no documents in split {split.value}")
    forms = len(selected)
    fields = sum(len(d.fields) for d in selected)
    return DatasetStats(
        forms=forms,
        fields=fields,
        fields_per_form=fields / forms,
        languages=len({d.language for d in selected}),
        split=split,
    )


# -- fingerprinting -------------------------------------------------------------


def corpus_fingerprint(docs: Sequence[FormDocument]) -> str:
    """Deterministic content hash over documents (annotations + pixels)."""
    digest = hashlib.sha256()
    for doc in sorted(docs, key=lambda d: d.doc_id):
        payload = document_to_json(doc, image_relpath="")
        digest.update(json.dumps(payload, sort_keys=True).encode("utf-8"))
        digest.update(np.ascontiguousarray(doc.image).tobytes())
    return digest.hexdigest()


def words_outside_fields(doc: FormDocument) -> Optional[List[Word]]:
    """Word annotations whose centers are not inside any field box.

    Redaction erases value pixels, so value words must be dropped from the
    empty form's annotations; label words (outside the input areas) survive.
    """
    if doc.words is None:
        return None
    kept = []
    for word in doc.words:
        c = bbox_center(word.bbox)
        if not any(contains(spec.bbox, c) for spec in doc.fields):
            kept.append(word)
    return kept
