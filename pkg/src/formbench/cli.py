"""Command-line entry points binding corpus, agent, localization, and
evaluation into reproducible runs.

Subcommands: ``convert`` (native or canonical source tree -> canonical
redacted corpus), ``synthesize`` (write the built-in synthetic corpus),
``run`` (execute a benchmark run into runs/<run_id>/), and ``report``
(merge run reports into one table).

Exit codes: 0 success, 2 schema/validation errors, 3 episode failure
(partial report still written), 4 incompatible corpus hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from formbench import __version__, imgio
from formbench.agent import (
    HTTPModelClient,
    ReplayModelClient,
    RunConfig,
    run_benchmark,
)
from formbench.converters import load_native
from formbench.corpus import (
    FormDocument,
    SourceDataset,
    Split,
    corpus_fingerprint,
    dataset_stats,
    load_document,
    load_relation_dataset,
    redact_values,
    save_document,
    words_outside_fields,
)
from formbench.editor import render
from formbench.errors import ConfigurationError, CorpusError, FormbenchError
from formbench.evaluation import (
    aggregate_macro,
    build_report,
    format_percent,
    load_overrides,
    report_csv_rows,
)
from formbench.localization import (
    HeuristicBackend,
    OracleBackend,
    RecordingBackend,
    RemoteBackend,
)
from formbench.persona import Persona, load_persona, save_persona
from formbench.synthetic import write_corpus

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_EPISODE = 3
EXIT_HASH_MISMATCH = 4

# Flag spellings -> configuration enum names.
MODE_FLAGS = {"one-shot": "ONE_SHOT", "iterative": "ITERATIVE"}
TOOLSET_FLAGS = {
    "coords": "BASELINE_COORDS",
    "som": "BASELINE_SOM",
    "fieldfinder": "FIELDFINDER",
    "gt-coords": "GT_COORDS",
}
PERSONA_FLAGS = {"text": "TEXT", "image": "IMAGE"}


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


# -- convert --------------------------------------------------------------------


def _is_canonical_tree(root: Path, dataset: SourceDataset) -> bool:
    dataset_dir = root / dataset.value
    return any(
        (dataset_dir / sp.dirname / "annotations").is_dir()
        for sp in (Split.TRAIN, Split.TEST)
    )


def _load_canonical_for_convert(
    root: Path, dataset: SourceDataset
) -> Tuple[List[FormDocument], Dict[str, Persona], List[str]]:
    """Load canonical annotations one file at a time, collecting errors."""
    docs: List[FormDocument] = []
    errors: List[str] = []
    dataset_dir = root / dataset.value
    for sp in (Split.TRAIN, Split.TEST):
        ann_dir = dataset_dir / sp.dirname / "annotations"
        if not ann_dir.is_dir():
            continue
        for ann_path in sorted(ann_dir.glob("*.json")):
            try:
                docs.append(load_document(ann_path, dataset, split=sp))
            except CorpusError as exc:
                errors.append(str(exc))
    personas = _load_personas_dir(root / "personas")[0] if (
        root / "personas"
    ).is_dir() else {}
    return docs, personas, errors


def _load_personas_dir(
    personas_dir: Path,
) -> Tuple[Dict[str, Persona], Dict[str, str]]:
    """Load every persona plus the doc->persona assignment, if present."""
    personas: Dict[str, Persona] = {}
    assignment: Dict[str, str] = {}
    if not personas_dir.is_dir():
        return personas, assignment
    for path in sorted(personas_dir.glob("*.json")):
        if path.name == "assignment.json":
            assignment = json.loads(path.read_text(encoding="utf-8"))
            continue
        persona = load_persona(path)
        personas[persona.persona_id] = persona
    return personas, assignment


def _write_personas(
    out_dir: Path, personas: Dict[str, Persona], assignment: Dict[str, str]
) -> None:
    if not personas:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for persona_id in sorted(personas):
        save_persona(personas[persona_id], out_dir / f"{persona_id}.json")
    payload = json.dumps(assignment, indent=2, sort_keys=True) + "\n"
    (out_dir / "assignment.json").write_text(payload, encoding="utf-8")


def cmd_convert(args: argparse.Namespace) -> int:
    root = Path(args.root)
    out = Path(args.out)
    try:
        dataset = SourceDataset(args.dataset.upper().replace("-", "_"))
    except ValueError:
        return _fail(f"unknown dataset {args.dataset!r}", EXIT_SCHEMA)

    personas: Dict[str, Persona] = {}
    assignment: Dict[str, str] = {}
    try:
        if _is_canonical_tree(root, dataset):
            docs, personas, errors = _load_canonical_for_convert(root, dataset)
            if errors:
                return _fail(
                    "schema errors in annotations:\n" + "\n".join(errors),
                    EXIT_SCHEMA,
                )
            _, assignment = _load_personas_dir(root / "personas")
        else:
            docs, persona_by_doc = load_native(root, dataset, None)
            personas = {p.persona_id: p for p in persona_by_doc.values()}
            assignment = {
                doc_id: p.persona_id for doc_id, p in persona_by_doc.items()
            }
    except CorpusError as exc:
        return _fail(str(exc), EXIT_SCHEMA)

    if not docs:
        return _fail(f"no annotations found under {root}", EXIT_SCHEMA)

    converted: List[FormDocument] = []
    dropped = 0
    for doc in docs:
        if not doc.fields:
            dropped += 1
            assignment.pop(doc.doc_id, None)
            continue
        if doc.values_present:
            image = redact_values(doc)
            words = words_outside_fields(doc)
        else:
            image = doc.image
            words = doc.words
        converted.append(
            FormDocument(
                doc_id=doc.doc_id,
                image=image,
                width=doc.width,
                height=doc.height,
                fields=doc.fields,
                words=words,
                source_dataset=doc.source_dataset,
                language=doc.language,
                split=doc.split,
                values_present=False,
            )
        )

    for doc in converted:
        split = doc.split if doc.split is not None else Split.TEST
        save_document(doc, out / dataset.value / split.dirname)
    _write_personas(out / "personas", personas, assignment)

    for sp in (Split.TRAIN, Split.TEST):
        in_split = [d for d in converted if (d.split or Split.TEST) == sp]
        if not in_split:
            continue
        stats = dataset_stats(in_split, sp)
        print(
            f"{dataset.value}/{sp.dirname}: "
            f"{stats.forms} forms, {stats.fields} fields"
        )
    if dropped:
        print(f"dropped {dropped} page(s) with no fields")
    return EXIT_OK


# -- synthesize -------------------------------------------------------------------


def cmd_synthesize(args: argparse.Namespace) -> int:
    counts = write_corpus(
        Path(args.out),
        filled=args.filled,
        background=args.background,
        train_forms=args.train_forms,
        test_forms=args.test_forms,
    )
    for split_name in ("train", "test"):
        forms = counts.get(f"{split_name}_forms", 0)
        fields = counts.get(f"{split_name}_fields", 0)
        if forms:
            print(f"SYNTHETIC/{split_name}: {forms} forms, {fields} fields")
    return EXIT_OK


# -- run --------------------------------------------------------------------------


_FLAG_TO_CONFIG = (
    ("corpus", "corpus"),
    ("dataset", "dataset"),
    ("replay", "replay"),
    ("backend", "backend"),
    ("max_rounds", "max_rounds"),
    ("parallelism", "parallelism"),
    ("out", "out"),
)


def _effective_config(args: argparse.Namespace) -> dict:
    config: dict = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"unreadable config {args.config}: {exc}")
        if not isinstance(config, dict):
            raise ConfigurationError("config file must hold a JSON object")
    for flag, key in _FLAG_TO_CONFIG:
        value = getattr(args, flag, None)
        if value is not None:
            config[key] = value
    if args.mode is not None:
        config["mode"] = MODE_FLAGS[args.mode]
    if args.toolset is not None:
        config["toolset"] = TOOLSET_FLAGS[args.toolset]
    if args.persona_mode is not None:
        config["persona_mode"] = PERSONA_FLAGS[args.persona_mode]
    return config


def _build_model_client(config: dict):
    if config.get("replay"):
        return ReplayModelClient(config["replay"])
    if config.get("model_url"):
        return HTTPModelClient(
            base_url=config["model_url"],
            model_id=config.get("model_id", "scripted"),
            credential_env=config.get("credential_env", "MODEL_API_KEY"),
        )
    raise ConfigurationError(
        "no model client configured: give a replay file or a model_url"
    )


def _build_backend(spec: Optional[str], docs: Sequence[FormDocument]):
    if spec is None:
        return None
    if spec == "oracle":
        return OracleBackend.from_documents(docs)
    if spec == "heuristic":
        return HeuristicBackend.from_documents(docs)
    if spec.startswith("remote:"):
        url = spec[len("remote:"):]
        if not url:
            raise ConfigurationError("remote backend needs a URL: remote:<url>")
        return RemoteBackend(url)
    raise ConfigurationError(
        f"unknown backend {spec!r}: expected oracle, heuristic, or remote:<url>"
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _effective_config(args)
    except ConfigurationError as exc:
        return _fail(str(exc), EXIT_SCHEMA)

    corpus_root = config.get("corpus")
    dataset_name = config.get("dataset")
    if not corpus_root or not dataset_name:
        return _fail("a corpus root and dataset are required", EXIT_SCHEMA)

    try:
        dataset = SourceDataset(str(dataset_name).upper().replace("-", "_"))
        split = Split(str(config.get("split", "TEST")).upper())
        run_config = RunConfig.from_json(config)
    except (ValueError, KeyError) as exc:
        return _fail(f"invalid configuration: {exc}", EXIT_SCHEMA)

    corpus_root = Path(corpus_root)
    try:
        docs = load_relation_dataset(corpus_root, dataset, split)
    except CorpusError as exc:
        return _fail(str(exc), EXIT_SCHEMA)

    personas_dir = Path(config.get("personas") or corpus_root / "personas")
    personas, assignment = _load_personas_dir(personas_dir)
    persona_for_doc: Dict[str, Persona] = {}
    for doc in docs:
        persona_id = assignment.get(doc.doc_id)
        if persona_id is None or persona_id not in personas:
            return _fail(
                f"no persona assigned to document {doc.doc_id!r} "
                f"under {personas_dir}",
                EXIT_SCHEMA,
            )
        persona_for_doc[doc.doc_id] = personas[persona_id]

    try:
        client = _build_model_client(config)
        backend = _build_backend(config.get("backend"), docs)
    except (ConfigurationError, FormbenchError) as exc:
        return _fail(str(exc), EXIT_SCHEMA)
    recording = RecordingBackend(backend) if backend is not None else None

    overrides = {}
    if config.get("overrides"):
        try:
            overrides = load_overrides(config["overrides"])
        except (OSError, ValueError, KeyError) as exc:
            return _fail(f"unreadable overrides file: {exc}", EXIT_SCHEMA)

    corpus_hash = corpus_fingerprint(docs)
    hashed_config = dict(
        run_config.to_json(),
        dataset=dataset.value,
        split=split.value,
        backend=config.get("backend"),
    )
    # Execution knobs don't change the outputs; keep them out of the identity.
    for knob in ("parallelism", "retries", "retry_backoff_s"):
        hashed_config.pop(knob, None)
    config_hash = hashlib.sha256(
        json.dumps(hashed_config, sort_keys=True).encode("utf-8")
    ).hexdigest()
    run_id = hashlib.sha256(
        (config_hash + corpus_hash).encode("utf-8")
    ).hexdigest()[:12]

    out_root = Path(config.get("out", "runs"))
    out_root.mkdir(parents=True, exist_ok=True)
    lock_path = out_root / f"{run_id}.lock"
    try:
        lock_fd = os.open(str(lock_path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        return _fail(
            f"run {run_id} is already in progress (lock {lock_path})",
            EXIT_SCHEMA,
        )

    try:
        try:
            results = run_benchmark(
                docs, persona_for_doc, run_config, client, recording
            )
        except (ConfigurationError, KeyError) as exc:
            return _fail(f"run aborted: {exc}", EXIT_SCHEMA)

        report = build_report(
            results,
            run_config,
            overrides=overrides,
            locate_records=recording.records if recording else None,
            corpus_fingerprint=corpus_hash,
        )

        run_dir = out_root / run_id
        transcripts_dir = run_dir / "transcripts"
        canvases_dir = run_dir / "canvases"
        transcripts_dir.mkdir(parents=True, exist_ok=True)
        canvases_dir.mkdir(parents=True, exist_ok=True)

        (run_dir / "report.json").write_text(report.dumps(), encoding="utf-8")
        with open(run_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(report_csv_rows([report]))
        for result in results:
            payload = json.dumps(
                result.transcript.to_json(include_wall_time=False),
                indent=2,
                sort_keys=True,
            ) + "\n"
            (transcripts_dir / f"{result.doc.doc_id}.json").write_text(
                payload, encoding="utf-8"
            )
            imgio.save_png(
                render(result.canvas), canvases_dir / f"{result.doc.doc_id}.png"
            )

        manifest = {
            "run_id": run_id,
            "config_path": args.config,
            "config_hash": config_hash,
            "corpus_hash": corpus_hash,
            "artifact_version": __version__,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "dataset": dataset.value,
            "split": split.value,
        }
        (run_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

        failed = sorted(report.failed_episodes)
        print(f"run {run_id}: {len(results)} episode(s), "
              f"macro accuracy {format_percent(report.macro_average)}%")
        if failed:
            print(f"failed episodes: {', '.join(failed)}", file=sys.stderr)
            return EXIT_EPISODE
        return EXIT_OK
    finally:
        os.close(lock_fd)
        lock_path.unlink(missing_ok=True)


# -- report -----------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    raw_reports = []
    for run_dir in args.run_dirs:
        report_path = Path(run_dir) / "report.json"
        if not report_path.is_file():
            return _fail(f"no report.json under {run_dir}", EXIT_SCHEMA)
        try:
            raw_reports.append(json.loads(report_path.read_text(encoding="utf-8")))
        except ValueError as exc:
            return _fail(f"malformed {report_path}: {exc}", EXIT_SCHEMA)

    hashes = {r.get("corpus_fingerprint", "") for r in raw_reports}
    hashes.discard("")
    if len(hashes) > 1:
        return _fail(
            "incompatible corpus hashes across runs: " + ", ".join(sorted(hashes)),
            EXIT_HASH_MISMATCH,
        )

    # Group per-dataset accuracies by model: each run contributes one
    # setting, so within a dataset we average settings before the macro.
    by_model: Dict[str, Dict[str, List[float]]] = {}
    rows: List[List[str]] = [[
        "model_id", "mode", "toolset", "persona_mode", "dataset",
        "accuracy_percent", "fields",
    ]]
    for report in raw_reports:
        cfg = report.get("config", {})
        model_id = str(cfg.get("model_id", "unknown"))
        datasets = by_model.setdefault(model_id, {})
        for dataset, stats in sorted(report.get("per_dataset", {}).items()):
            accuracy = float(stats["accuracy"])
            datasets.setdefault(dataset, []).append(accuracy)
            rows.append([
                model_id,
                str(cfg.get("mode", "")),
                str(cfg.get("toolset", "")),
                str(cfg.get("persona_mode", "")),
                dataset,
                format_percent(accuracy),
                str(int(stats.get("fields", 0))),
            ])

    macros = {
        model_id: aggregate_macro(datasets)
        for model_id, datasets in sorted(by_model.items())
    }

    for row in rows:
        print("\t".join(row))
    for model_id, macro in macros.items():
        print(f"macro {model_id}: {format_percent(macro)}%")

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        merged = {
            "runs": raw_reports,
            "macro_averages": macros,
            "corpus_fingerprint": next(iter(hashes), ""),
        }
        (out_dir / "merged.json").write_text(
            json.dumps(merged, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        with open(out_dir / "merged.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formbench",
        description="Form-filling benchmark: corpus tools and evaluation runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_convert = sub.add_parser(
        "convert", help="convert a source tree into the canonical redacted corpus"
    )
    p_convert.add_argument("root", help="source tree root")
    p_convert.add_argument("--dataset", required=True,
                           help="dataset name (e.g. FUNSD, XFUND)")
    p_convert.add_argument("--out", required=True, help="output corpus root")
    p_convert.set_defaults(func=cmd_convert)

    p_synth = sub.add_parser(
        "synthesize", help="write the built-in synthetic corpus"
    )
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--filled", action="store_true",
                         help="render accepted values into the fields")
    p_synth.add_argument("--background", default="white",
                         choices=["white", "gradient"])
    p_synth.add_argument("--train-forms", type=int, default=4)
    p_synth.add_argument("--test-forms", type=int, default=4)
    p_synth.set_defaults(func=cmd_synthesize)

    p_run = sub.add_parser("run", help="execute a benchmark run")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--corpus", help="corpus root directory")
    p_run.add_argument("--dataset", help="dataset name")
    p_run.add_argument("--mode", choices=sorted(MODE_FLAGS))
    p_run.add_argument("--toolset", choices=sorted(TOOLSET_FLAGS))
    p_run.add_argument("--persona-mode", dest="persona_mode",
                       choices=sorted(PERSONA_FLAGS))
    p_run.add_argument("--backend",
                       help="field localization: oracle, heuristic, remote:<url>")
    p_run.add_argument("--replay", help="replay file of recorded responses")
    p_run.add_argument("--max-rounds", dest="max_rounds", type=int)
    p_run.add_argument("--parallelism", type=int)
    p_run.add_argument("--out", help="runs root directory (default: runs)")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="merge run reports into one table")
    p_report.add_argument("run_dirs", nargs="+", help="runs/<run_id> directories")
    p_report.add_argument("--out", help="directory for merged.csv/merged.json")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
