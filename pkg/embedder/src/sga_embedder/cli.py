"""CLI: `embed` writes an embedding file for a corpus, `verify` checks one."""

from __future__ import annotations

import argparse
import sys

from .encode import DEFAULT_MODEL, EncoderUnavailable, embed_corpus
from .sgae import EmbeddingFileError, verify_embedding_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sga-embed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="encode corpus sentences into an .sgae file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--batch-size", type=int, default=64, dest="batch_size")
    p.add_argument("--force", action="store_true")
    p.add_argument("--raw-text", action="store_true", dest="raw_text",
                   help="embed raw sentences instead of normalized text")

    p = sub.add_parser("verify", help="check an .sgae file against its corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--emb", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        if args.command == "embed":
            manifest = embed_corpus(
                args.corpus,
                args.out,
                model_name=args.model,
                batch_size=args.batch_size,
                force=args.force,
                raw_text=args.raw_text,
            )
            print(
                f"wrote {manifest.count} x {manifest.dim} vectors "
                f"(model {manifest.model_name!r}) to {args.out}"
            )
            return 0
        report = verify_embedding_file(args.corpus, args.emb)
        print(report)
        return 0 if report.ok else 1
    except (EncoderUnavailable, EmbeddingFileError, FileExistsError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
