"""Native-format loader tests over small handwritten fixture trees."""

from __future__ import annotations

import json

import numpy as np
import pytest

from formbench import imgio
from formbench.converters import load_funsd, load_native, load_xfund
from formbench.corpus import FieldKind, SourceDataset, Split
from formbench.errors import IngestionError, MissingAssetError
from formbench.persona import CorrectnessKind

WIDTH, HEIGHT = 400, 300


def _white_page() -> np.ndarray:
    return np.full((HEIGHT, WIDTH, 3), 255, dtype=np.uint8)


def _entity(ent_id, text, box, label, linking=(), words=None):
    if words is None:
        words = [{"text": text, "box": box}]
    return {
        "id": ent_id,
        "text": text,
        "box": list(box),
        "label": label,
        "linking": [list(pair) for pair in linking],
        "words": words,
    }


# A page with two good question->answer links, one link whose target is not
# labelled as an answer, one answer with a degenerate (zero-area) box, and a
# link that both endpoints list (it must only produce one field).
PAGE_ENTITIES = [
    _entity(0, "Name:", (10, 10, 60, 30), "question", linking=[(0, 1)]),
    _entity(
        1,
        "Ada Lovelace",
        (70, 10, 180, 30),
        "answer",
        linking=[(0, 1)],
        words=[
            {"text": "Ada", "box": [70, 10, 100, 30]},
            {"text": "Lovelace", "box": [105, 10, 180, 30]},
        ],
    ),
    _entity(2, "Date:", (10, 40, 60, 60), "question", linking=[(2, 3)]),
    _entity(3, "1988-03-14", (70, 40, 180, 60), "answer"),
    _entity(4, "MEMO", (10, 70, 80, 90), "header"),
    # Question linked to another question: not a fillable field.
    _entity(5, "See also:", (10, 100, 80, 120), "question", linking=[(5, 0)]),
    # Answer whose box has no area: dropped.
    _entity(6, "Size:", (10, 130, 60, 150), "question", linking=[(6, 7)]),
    _entity(7, "tiny", (70, 130, 70, 130), "answer", words=[]),
]


def _write_funsd_tree(root, split_dir="training_data", pages=("page0",)):
    ann_dir = root / split_dir / "annotations"
    img_dir = root / split_dir / "images"
    ann_dir.mkdir(parents=True)
    img_dir.mkdir(parents=True)
    for doc_id in pages:
        (ann_dir / f"{doc_id}.json").write_text(
            json.dumps({"form": PAGE_ENTITIES}), encoding="utf-8"
        )
        imgio.save_png(_white_page(), img_dir / f"{doc_id}.png")
    return root


def test_funsd_loader_pairs_questions_with_answers(tmp_path):
    _write_funsd_tree(tmp_path, pages=("page0", "page1"))
    docs, personas = load_funsd(tmp_path, Split.TRAIN)

    assert [d.doc_id for d in docs] == ["page0", "page1"]
    doc = docs[0]
    assert doc.source_dataset is SourceDataset.FUNSD
    assert doc.language == "en"
    assert doc.split is Split.TRAIN
    assert doc.values_present is True
    assert (doc.width, doc.height) == (WIDTH, HEIGHT)

    # Only the two well-formed question->answer links become fields.
    assert [f.field_id for f in doc.fields] == ["0_1", "2_3"]
    name_field = doc.fields[0]
    assert name_field.name == "Name:"
    assert name_field.hierarchical_name == "Name:"
    assert name_field.kind is FieldKind.TEXT
    assert name_field.expected_nonempty is True
    assert name_field.correctness.kind is CorrectnessKind.EXACT
    assert name_field.correctness.fact_keys == ("field.0_1",)

    # The field box is the answer's box, normalized to the page.
    assert name_field.bbox.x0 == pytest.approx(70 / WIDTH)
    assert name_field.bbox.y0 == pytest.approx(10 / HEIGHT)
    assert name_field.bbox.x1 == pytest.approx(180 / WIDTH)
    assert name_field.bbox.y1 == pytest.approx(30 / HEIGHT)


def test_funsd_loader_collects_words_and_personas(tmp_path):
    _write_funsd_tree(tmp_path)
    docs, personas = load_funsd(tmp_path, Split.TRAIN)
    doc = docs[0]

    texts = [w.text for w in doc.words]
    # Every entity word with a real box and text survives; the degenerate
    # "tiny" answer carried no words at all.
    assert texts == [
        "Name:", "Ada", "Lovelace", "Date:", "1988-03-14",
        "MEMO", "See also:", "Size:",
    ]

    persona = personas["page0"]
    assert persona.persona_id == "source-page0"
    assert persona.facts == {
        "field.0_1": "Ada Lovelace",
        "field.2_3": "1988-03-14",
    }


def test_funsd_duplicate_links_make_one_field(tmp_path):
    _write_funsd_tree(tmp_path)
    docs, _ = load_funsd(tmp_path, Split.TRAIN)
    # (0, 1) is listed by both endpoints but appears once.
    ids = [f.field_id for f in docs[0].fields]
    assert ids.count("0_1") == 1


def test_funsd_testing_split_uses_its_own_directory(tmp_path):
    _write_funsd_tree(tmp_path, split_dir="testing_data", pages=("t0",))
    docs, _ = load_funsd(tmp_path, Split.TEST)
    assert [d.doc_id for d in docs] == ["t0"]
    assert docs[0].split is Split.TEST


def test_funsd_missing_annotations_directory(tmp_path):
    with pytest.raises(IngestionError, match="no annotations found"):
        load_funsd(tmp_path, Split.TRAIN)


def test_funsd_malformed_json_names_the_file(tmp_path):
    _write_funsd_tree(tmp_path)
    bad = tmp_path / "training_data" / "annotations" / "broken.json"
    bad.write_text("{not json", encoding="utf-8")
    imgio.save_png(
        _white_page(), tmp_path / "training_data" / "images" / "broken.png"
    )
    with pytest.raises(IngestionError, match="broken.json"):
        load_funsd(tmp_path, Split.TRAIN)


def test_funsd_missing_image_is_reported(tmp_path):
    _write_funsd_tree(tmp_path)
    extra = tmp_path / "training_data" / "annotations" / "zz_lost.json"
    extra.write_text(json.dumps({"form": []}), encoding="utf-8")
    with pytest.raises(MissingAssetError, match="zz_lost"):
        load_funsd(tmp_path, Split.TRAIN)


def test_funsd_loads_all_splits_when_unspecified(tmp_path):
    _write_funsd_tree(tmp_path, split_dir="training_data", pages=("tr0",))
    _write_funsd_tree(tmp_path, split_dir="testing_data", pages=("te0",))
    docs, personas = load_funsd(tmp_path)
    assert sorted((d.doc_id, d.split.value) for d in docs) == [
        ("te0", "TEST"), ("tr0", "TRAIN"),
    ]
    assert set(personas) == {"tr0", "te0"}


def test_funsd_all_splits_missing(tmp_path):
    with pytest.raises(IngestionError, match="no annotations found"):
        load_funsd(tmp_path)


# -- XFUND-style layout -------------------------------------------------------


def _write_xfund_tree(root, lang="de", token="val"):
    lang_dir = root / lang
    (lang_dir / "images").mkdir(parents=True)
    doc_id = f"{lang}_form_0"
    imgio.save_png(_white_page(), lang_dir / "images" / f"{doc_id}.png")
    payload = {
        "documents": [
            {
                "id": doc_id,
                "img": {"fname": f"{doc_id}.png", "width": WIDTH, "height": HEIGHT},
                "document": PAGE_ENTITIES,
            }
        ]
    }
    (lang_dir / f"{lang}.{token}.json").write_text(
        json.dumps(payload), encoding="utf-8"
    )
    return root


def test_xfund_loader_reads_language_directories(tmp_path):
    _write_xfund_tree(tmp_path, lang="de")
    _write_xfund_tree(tmp_path, lang="ja")
    docs, personas = load_xfund(tmp_path, Split.TEST)

    assert [d.doc_id for d in docs] == ["de_form_0", "ja_form_0"]
    assert [d.language for d in docs] == ["de", "ja"]
    assert all(d.source_dataset is SourceDataset.XFUND for d in docs)
    assert [f.field_id for f in docs[0].fields] == ["0_1", "2_3"]
    assert personas["de_form_0"].facts["field.0_1"] == "Ada Lovelace"


def test_xfund_split_tokens_filter_files(tmp_path):
    _write_xfund_tree(tmp_path, lang="de", token="train")
    # The val file is the only TEST candidate; the train file must be ignored.
    with pytest.raises(IngestionError, match="no annotations found"):
        load_xfund(tmp_path, Split.TEST)
    docs, _ = load_xfund(tmp_path, Split.TRAIN)
    assert len(docs) == 1
    assert docs[0].split is Split.TRAIN


def test_xfund_loads_all_splits_when_unspecified(tmp_path):
    _write_xfund_tree(tmp_path, lang="de", token="train")
    _write_xfund_tree(tmp_path, lang="ja", token="val")
    docs, _ = load_xfund(tmp_path)
    assert sorted((d.doc_id, d.split.value) for d in docs) == [
        ("de_form_0", "TRAIN"), ("ja_form_0", "TEST"),
    ]
    with pytest.raises(IngestionError, match="no annotations found"):
        load_xfund(tmp_path / "missing")


def test_xfund_missing_image_is_reported(tmp_path):
    _write_xfund_tree(tmp_path, lang="de")
    (tmp_path / "de" / "images" / "de_form_0.png").unlink()
    with pytest.raises(MissingAssetError, match="de_form_0.png"):
        load_xfund(tmp_path, Split.TEST)


def test_xfund_malformed_entry_names_the_file(tmp_path):
    lang_dir = tmp_path / "fr"
    lang_dir.mkdir()
    (lang_dir / "fr.val.json").write_text(
        json.dumps({"documents": [{"no_img": True}]}), encoding="utf-8"
    )
    with pytest.raises(IngestionError, match="fr.val.json"):
        load_xfund(tmp_path, Split.TEST)


# -- dispatch -----------------------------------------------------------------


def test_load_native_dispatches_by_dataset(tmp_path):
    _write_funsd_tree(tmp_path)
    docs, _ = load_native(tmp_path, SourceDataset.FUNSD, Split.TRAIN)
    assert docs and docs[0].source_dataset is SourceDataset.FUNSD


@pytest.mark.parametrize(
    "dataset",
    [SourceDataset.FORM_NLU, SourceDataset.AUTO_LOANS, SourceDataset.SYNTHETIC],
)
def test_load_native_rejects_canonical_only_datasets(tmp_path, dataset):
    with pytest.raises(IngestionError, match="canonical schema"):
        load_native(tmp_path, dataset, Split.TRAIN)
