"""Command-line pipeline: train, explain, eval, attribute, inspect.

Anything that affects numerics lives in JSON config files; flags only
select files and modes, so a run is reproducible from its config
artifact.  All randomness flows from the config's single ``seed`` through
numpy SeedSequence spawning (parameter init, k-means, shuffling, in that
order).

Exit codes: 0 ok, 2 config/usage error, 3 training divergence,
4 I/O-or-provider failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data_io, explanation, faithfulness, target_client, training
from .data_io import (
    AttributionBundle,
    EmbeddingBundle,
    SAFE_ID_RE,
    attribution_path,
    bundle_path,
    canonical_json,
    load_model,
    read_bundle,
    read_dataset,
    save_model,
)
from .errors import (
    DivergedLoss,
    EmptyDataset,
    LabelOutOfRange,
    ProtosurError,
    UnknownDatasetKind,
    UnknownFormat,
)
from .segmentation import Document
from .surrogate import SurrogateModel, SurrogateTextPredictor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4

_TRAIN_CONFIG_KEYS = {
    # numerics (mirrors TrainConfig)
    "learning_rate", "batch_size", "epochs", "num_prototypes", "lambda_proto",
    "lambda_diversity", "eps", "seed", "use_attributions", "update_prototypes",
    "num_classes", "diversity_normalized",
    # files and execution
    "dataset", "eval_dataset", "embeddings", "attributions", "predictions",
    "model_out", "report_out", "checkpoint_dir", "threads", "include_timings",
}

_CONFIG_ERRORS = (ValueError, UnknownFormat, UnknownDatasetKind, LabelOutOfRange,
                  EmptyDataset, KeyError)


class _ConfigError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parsed = json.load(handle)
    except FileNotFoundError:
        raise _ConfigError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _ConfigError(f"{what} file {path} is not valid JSON: {exc.msg}")
    if not isinstance(parsed, dict):
        raise _ConfigError(f"{what} file {path} must hold a JSON object")
    return parsed


def _require_file(config: dict, key: str, required: bool = True) -> Path | None:
    value = config.get(key)
    if value is None:
        if required:
            raise _ConfigError(f"config key {key!r} is required")
        return None
    path = Path(value)
    if not path.is_file():
        raise _ConfigError(f"config key {key!r}: file not found: {path}")
    return path


def _require_dir(config: dict, key: str, required: bool = True) -> Path | None:
    value = config.get(key)
    if value is None:
        if required:
            raise _ConfigError(f"config key {key!r} is required")
        return None
    path = Path(value)
    if not path.is_dir():
        raise _ConfigError(f"config key {key!r}: directory not found: {path}")
    return path


def _check_safe_ids(documents: list[Document]) -> None:
    for doc in documents:
        if not SAFE_ID_RE.match(doc.id):
            raise _ConfigError(
                f"document id {doc.id!r} is not filesystem-safe "
                "(expected [A-Za-z0-9._-]+)"
            )


def _load_bundles(
    documents: list[Document], directory: Path
) -> dict[str, EmbeddingBundle]:
    missing = [doc.id for doc in documents if not bundle_path(directory, doc.id).is_file()]
    if missing:
        raise ProtosurError(
            f"missing embedding bundles for {len(missing)} document(s): "
            + ", ".join(missing[:10])
        )
    return {doc.id: read_bundle(bundle_path(directory, doc.id)) for doc in documents}


def _load_attributions(
    documents: list[Document], directory: Path | None
) -> dict[str, AttributionBundle]:
    if directory is None:
        return {}
    found = {}
    for doc in documents:
        path = attribution_path(directory, doc.id)
        if path.is_file():
            found[doc.id] = read_bundle(path)
    return found


def _apply_predictions(documents: list[Document], path: Path | None) -> list[Document]:
    if path is None:
        return documents
    provider = target_client.FilePredictionProvider(path)
    relabeled = []
    for doc in documents:
        relabeled.append(Document(
            id=doc.id, text=doc.text, sentences=doc.sentences,
            label=provider.label_for(doc.id),
        ))
    return relabeled


def _write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


# --- train ---------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    config = _load_json(args.config, "config")
    unknown = set(config) - _TRAIN_CONFIG_KEYS
    if unknown:
        raise _ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    dataset_path = _require_file(config, "dataset")
    embeddings_dir = _require_dir(config, "embeddings")
    attributions_dir = _require_dir(config, "attributions", required=False)
    predictions_path = _require_file(config, "predictions", required=False)
    eval_path = _require_file(config, "eval_dataset", required=False)
    model_out = config.get("model_out")
    if not model_out:
        raise _ConfigError("config key 'model_out' is required")

    numeric_keys = {
        k: config[k]
        for k in config
        if k in training.TrainConfig.__dataclass_fields__
    }
    train_config = training.TrainConfig(**numeric_keys)
    train_config.validate()

    documents = _apply_predictions(read_dataset(dataset_path), predictions_path)
    _check_safe_ids(documents)
    bundles = _load_bundles(documents, embeddings_dir)
    attributions = _load_attributions(documents, attributions_dir)

    eval_documents = eval_bundles = eval_attributions = None
    if eval_path is not None:
        eval_documents = _apply_predictions(read_dataset(eval_path), predictions_path)
        _check_safe_ids(eval_documents)
        eval_bundles = _load_bundles(eval_documents, embeddings_dir)
        eval_attributions = _load_attributions(eval_documents, attributions_dir)

    checkpoint_dir = config.get("checkpoint_dir")
    checkpoint_fn = None
    if checkpoint_dir:
        checkpoint_root = Path(checkpoint_dir)
        checkpoint_root.mkdir(parents=True, exist_ok=True)

        def checkpoint_fn(epoch: int, snapshot: SurrogateModel) -> None:
            save_model(snapshot, checkpoint_root / f"epoch-{epoch:03d}.psm")

    model, report = training.train(
        documents, bundles, train_config,
        attributions=attributions,
        eval_documents=eval_documents,
        eval_bundles=eval_bundles,
        eval_attributions=eval_attributions,
        threads=int(config.get("threads", 1)),
        checkpoint_fn=checkpoint_fn,
    )
    Path(model_out).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_out)
    report_out = config.get("report_out")
    if report_out:
        payload = canonical_json(report.to_json_dict(
            include_timings=bool(config.get("include_timings", False))
        ))
        _write_bytes(Path(report_out), payload)
    final_fidelity = report.epochs[-1].fidelity if report.epochs else None
    print(f"trained {model.num_prototypes} prototypes over {len(documents)} documents"
          + (f"; eval fidelity {final_fidelity:.4f}" if final_fidelity is not None else ""))
    return EXIT_OK


# --- explain --------------------------------------------------------------------

def cmd_explain(args: argparse.Namespace) -> int:
    if args.top_k < 1:
        raise _ConfigError("--top-k must be at least 1")
    if args.format not in ("json", "html"):
        raise _ConfigError(f"unsupported --format {args.format!r}")
    model = load_model(args.model)
    documents = read_dataset(args.dataset)
    _check_safe_ids(documents)
    bundles = _load_bundles(documents, Path(args.embeddings))
    attributions = _load_attributions(
        documents, Path(args.attributions) if args.attributions else None
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    index = []
    for doc in documents:
        result = explanation.explain(
            doc, model, bundles[doc.id], attributions.get(doc.id), top_k=args.top_k
        )
        payload = explanation.render_report(result, format=args.format)
        name = f"{doc.id}.{args.format}"
        (out_dir / name).write_bytes(payload)
        index.append({
            "doc_id": doc.id,
            "file": name,
            "predicted_class": result.predicted_class,
        })
    (out_dir / "index.json").write_bytes(canonical_json({"reports": index}))
    print(f"wrote {len(index)} explanation report(s) to {out_dir}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------------

def _build_predictor(
    provider_config: dict,
    model: SurrogateModel,
    documents: list[Document],
    bundles: dict[str, EmbeddingBundle],
    attributions: dict[str, AttributionBundle],
):
    kind = provider_config.get("type")
    if kind == "synthetic":
        return target_client.SyntheticOracle.from_config(provider_config)
    if kind == "http":
        return target_client.HttpProvider(
            url=provider_config["url"],
            model=provider_config.get("model", "default"),
            dataset_kind=provider_config["dataset_kind"],
            auth_env=provider_config.get("auth_env", target_client.DEFAULT_AUTH_ENV),
            timeout=float(provider_config.get("timeout", 30.0)),
            max_retries=int(provider_config.get("max_retries", 3)),
            max_in_flight=int(provider_config.get("max_in_flight", 1)),
        )
    if kind == "surrogate":
        predictor = SurrogateTextPredictor(model)
        for doc in documents:
            predictor.register_document(doc, bundles[doc.id], attributions.get(doc.id))
        return predictor
    if kind == "file":
        raise _ConfigError(
            "the file provider serves stored per-id predictions only; "
            "perturbation metrics need 'synthetic', 'http', or 'surrogate'"
        )
    raise _ConfigError(f"unknown provider type {kind!r}")


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    documents = read_dataset(args.dataset)
    if not documents:
        raise EmptyDataset("dataset holds no documents")
    _check_safe_ids(documents)
    bundles = _load_bundles(documents, Path(args.embeddings))
    attributions = _load_attributions(
        documents, Path(args.attributions) if args.attributions else None
    )
    documents = _apply_predictions(
        documents, Path(args.predictions) if args.predictions else None
    )

    provider_config = _load_json(args.provider, "provider config")
    predictor = _build_predictor(provider_config, model, documents, bundles, attributions)

    # Surrogate labels and, when targets are known, fidelity accuracy.
    surrogate_labels = [
        model.predict_bundle(bundles[doc.id], attributions.get(doc.id)).predicted_class
        for doc in documents
    ]
    accuracy = None
    if args.importance == "self" and all(doc.label is not None for doc in documents):
        accuracy = faithfulness.fidelity_accuracy(surrogate_labels, documents)

    if args.importance == "self":
        def importance(doc: Document) -> list[float]:
            result = explanation.explain(
                doc, model, bundles[doc.id], attributions.get(doc.id),
                top_k=model.num_prototypes,
            )
            return result.sentence_importance()
    else:
        if not args.importance_file:
            raise _ConfigError("--importance file requires --importance-file DIR")
        importance_dir = Path(args.importance_file)
        if not importance_dir.is_dir():
            raise _ConfigError(f"--importance-file directory not found: {importance_dir}")

        def importance(doc: Document) -> list[float]:
            path = attribution_path(importance_dir, doc.id)
            if not path.is_file():
                raise ProtosurError(f"missing attribution file for document {doc.id!r}")
            bundle = read_bundle(path)
            return list(faithfulness.aggregate_token_scores(
                [np.asarray(s, dtype=np.float64) for s in bundle.scores], mode="mean"
            ))

    report = faithfulness.evaluate_explainer(
        predictor, documents, importance, variant=args.variant, accuracy=accuracy
    )
    out_prefix = Path(args.out_prefix)
    _write_bytes(out_prefix.with_suffix(".json"), canonical_json(report.to_json_dict()))
    _write_bytes(out_prefix.with_suffix(".csv"), report.to_csv().encode("utf-8"))

    def fmt(value) -> str:
        return "n/a" if value is None else f"{value:.4f}"

    print(f"documents evaluated: {len(documents)} (variant: {report.variant})")
    print(f"  acc  {fmt(report.accuracy)}")
    print(f"  comp {fmt(report.comprehensiveness)}  suff {fmt(report.sufficiency)}")
    print(f"  dff  {fmt(report.dff)}  dfs {fmt(report.dfs)}")
    print(f"  del  {fmt(report.deletion)}  ins {fmt(report.insertion)}"
          f"  (excluded from del/ins: {report.excluded_del_ins})")
    return EXIT_OK


# --- attribute ----------------------------------------------------------------------

def cmd_attribute(args: argparse.Namespace) -> int:
    documents = read_dataset(args.dataset)
    _check_safe_ids(documents)
    provider_config = _load_json(args.provider, "provider config")
    kind = provider_config.get("type")
    if kind == "synthetic":
        provider = target_client.SyntheticOracle.from_config(provider_config)
    elif kind == "http":
        provider = target_client.HttpProvider(
            url=provider_config["url"],
            model=provider_config.get("model", "default"),
            dataset_kind=provider_config["dataset_kind"],
            auth_env=provider_config.get("auth_env", target_client.DEFAULT_AUTH_ENV),
            timeout=float(provider_config.get("timeout", 30.0)),
            max_retries=int(provider_config.get("max_retries", 3)),
            max_in_flight=int(provider_config.get("max_in_flight", 1)),
        )
    else:
        raise _ConfigError("attribution needs a 'synthetic' or 'http' provider")

    bundles = {}
    if args.embeddings:
        bundles = _load_bundles(documents, Path(args.embeddings))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = skipped = 0
    for doc in documents:
        path = attribution_path(out_dir, doc.id)
        if args.resume and path.is_file():
            skipped += 1
            continue
        token_lists = bundles[doc.id].token_lists if doc.id in bundles else None
        bundle = target_client.occlusion_attributions(
            doc.text, provider, token_lists=token_lists, doc_id=doc.id
        )
        data_io.write_bundle(bundle, path)
        written += 1
    print(f"wrote {written} attribution file(s) to {out_dir}"
          + (f" ({skipped} already present)" if skipped else ""))
    return EXIT_OK


# --- inspect -----------------------------------------------------------------------

def cmd_inspect(args: argparse.Namespace) -> int:
    if args.segment:
        if not args.dataset:
            raise _ConfigError("--segment requires --dataset")
        for doc in read_dataset(args.dataset):
            record = {
                "id": doc.id,
                "sentences": [
                    {
                        "start": span.start,
                        "end": span.end,
                        "text": span.text_of(doc.text),
                        "tokens": list(span.tokens),
                    }
                    for span in doc.sentences
                ],
            }
            sys.stdout.write(canonical_json(record).decode("utf-8") + "\n")
        return EXIT_OK

    if not args.model:
        raise _ConfigError("inspect needs a model path (or --segment --dataset)")
    model = load_model(args.model)
    print(f"model: {args.model}")
    print(f"  dim {model.dim}, prototypes {model.num_prototypes}, "
          f"classes {model.num_classes}")
    print(f"  use_attributions {model.use_attributions}, "
          f"trainable_prototypes {model.prototypes.trainable}, eps {model.eps}")
    config = model.train_config
    if config:
        print(f"  train config: {json.dumps(config, sort_keys=True)}")
    for k, assoc in enumerate(model.prototypes.associations):
        text = assoc.text if len(assoc.text) <= 60 else assoc.text[:57] + "..."
        print(f"  prototype {k:3d} ~ {assoc.doc_id}[{assoc.sentence_index}] "
              f"(cos {assoc.similarity:.4f}): {text}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protosur",
        description="Train, apply, and evaluate a prototype-based surrogate explainer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a surrogate from a JSON config")
    p_train.add_argument("--config", required=True, help="path to the run config JSON")
    p_train.set_defaults(func=cmd_train)

    p_explain = sub.add_parser("explain", help="write per-document explanation reports")
    p_explain.add_argument("--model", required=True)
    p_explain.add_argument("--dataset", required=True)
    p_explain.add_argument("--embeddings", required=True, help="directory of .pse files")
    p_explain.add_argument("--attributions", help="directory of .psa files")
    p_explain.add_argument("--out", required=True, help="output directory")
    p_explain.add_argument("--format", default="json", help="json or html")
    p_explain.add_argument("--top-k", type=int, default=3, dest="top_k")
    p_explain.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("eval", help="faithfulness metrics for an explainer")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--attributions", help="directory of .psa files used by the model")
    p_eval.add_argument("--predictions", help="target predictions .jsonl")
    p_eval.add_argument("--provider", required=True, help="provider config JSON")
    p_eval.add_argument("--importance", choices=("self", "file"), default="self")
    p_eval.add_argument("--importance-file", dest="importance_file",
                        help="directory of .psa files scored as the explainer")
    p_eval.add_argument("--variant", choices=faithfulness.VARIANTS, default="drop")
    p_eval.add_argument("--out-prefix", dest="out_prefix", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_attr = sub.add_parser("attribute", help="occlusion attributions via a provider")
    p_attr.add_argument("--dataset", required=True)
    p_attr.add_argument("--provider", required=True, help="provider config JSON")
    p_attr.add_argument("--out", required=True, help="output directory for .psa files")
    p_attr.add_argument("--embeddings", help="directory of .pse files for token lists")
    p_attr.add_argument("--resume", action="store_true",
                        help="skip documents whose attribution file already exists")
    p_attr.set_defaults(func=cmd_attribute)

    p_inspect = sub.add_parser("inspect", help="summarize a model archive")
    p_inspect.add_argument("model", nargs="?", help="path to a .psm archive")
    p_inspect.add_argument("--segment", action="store_true",
                           help="print sentence segmentation for --dataset as JSON lines")
    p_inspect.add_argument("--dataset")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except _ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except DivergedLoss as exc:
        return _fail(EXIT_TRAINING, str(exc))
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except ProtosurError as exc:
        return _fail(EXIT_IO, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
