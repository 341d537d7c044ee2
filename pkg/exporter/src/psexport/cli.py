"""psexport command line: embeddings | predictions | attributions.

Exit codes: 0 ok, 2 usage/config error, 4 I/O-or-endpoint failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .client import EndpointConfig
from .errors import ExportError
from .jobs import ExportJob, export_attributions, export_embeddings, export_predictions


def _endpoint_from_file(path: str) -> EndpointConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return EndpointConfig.from_dict(json.load(handle))


def _summarize(label: str, result) -> None:
    parts = [f"{len(result.written)} written"]
    if result.skipped:
        parts.append(f"{len(result.skipped)} skipped")
    if result.failed:
        parts.append(f"{len(result.failed)} failed (see sidecar)")
    print(f"{label}: " + ", ".join(parts))


def cmd_embeddings(args) -> int:
    job = ExportJob(dataset=args.dataset, output=args.out,
                    encoder_id=args.encoder, resume=args.resume)
    _summarize("embeddings", export_embeddings(job))
    return 0


def cmd_predictions(args) -> int:
    job = ExportJob(dataset=args.dataset, output=args.out,
                    endpoint=_endpoint_from_file(args.endpoint),
                    dataset_kind=args.kind, resume=args.resume)
    _summarize("predictions", export_predictions(job))
    return 0


def cmd_attributions(args) -> int:
    job = ExportJob(dataset=args.dataset, output=args.out,
                    encoder_id=args.encoder,
                    endpoint=_endpoint_from_file(args.endpoint),
                    dataset_kind=args.kind, resume=args.resume)
    _summarize("attributions", export_attributions(job))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psexport",
        description="Export encoder embeddings, endpoint predictions, and "
                    "occlusion attributions in the surrogate's file formats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_emb = sub.add_parser("embeddings", help="write one .pse bundle per document")
    p_emb.add_argument("--dataset", required=True)
    p_emb.add_argument("--out", required=True, help="output directory")
    p_emb.add_argument("--encoder", default="hash:16", help="hash:<dim> or hf:<model>")
    p_emb.add_argument("--resume", action="store_true")
    p_emb.set_defaults(func=cmd_embeddings)

    p_pred = sub.add_parser("predictions", help="collect target labels via an endpoint")
    p_pred.add_argument("--dataset", required=True)
    p_pred.add_argument("--out", required=True, help="output .jsonl path")
    p_pred.add_argument("--endpoint", required=True, help="endpoint config JSON")
    p_pred.add_argument("--kind", default="binary-sentiment")
    p_pred.add_argument("--resume", action="store_true")
    p_pred.set_defaults(func=cmd_predictions)

    p_attr = sub.add_parser("attributions", help="occlusion scores via an endpoint")
    p_attr.add_argument("--dataset", required=True)
    p_attr.add_argument("--out", required=True, help="output directory")
    p_attr.add_argument("--encoder", default="hash:16")
    p_attr.add_argument("--endpoint", required=True, help="endpoint config JSON")
    p_attr.add_argument("--kind", default="binary-sentiment")
    p_attr.add_argument("--resume", action="store_true")
    p_attr.set_defaults(func=cmd_attributions)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
