"""Command-line front end: extract SGKT traces from a transformer checkpoint.

    sgks-extract --model gpt2 --prompts prompts.jsonl --layers 2:5 --out traces/

Prompts come from a JSONL file (one object per line with "id", "statement",
optional "context" and "label") or, with --probe-pairs, from the built-in
probe templates. Layer selections are comma-separated indices and inclusive
lo:hi ranges ("2:5" means layers 2, 3, 4, and 5).

Exit codes: 0 success, 1 bad invocation, 2 extraction or I/O failure.
Errors print a single line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .capture import ByteTokenizer, ExtractionJob, extract
from .errors import ExtractorError, UsageError
from .prompts import load_prompts_jsonl, probe_prompts


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so bad flags share the UsageError path."""

    def error(self, message: str):
        raise UsageError(message)


def parse_layers(text: str) -> tuple[int, ...]:
    """Parse "0,2:4,7" into sorted distinct indices (ranges are inclusive)."""
    layers: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo_text, _, hi_text = part.partition(":")
            try:
                lo, hi = int(lo_text), int(hi_text)
            except ValueError:
                raise UsageError(f"bad layer range {part!r}") from None
            if lo > hi:
                raise UsageError(f"empty layer range {part!r}")
            layers.extend(range(lo, hi + 1))
        else:
            try:
                layers.append(int(part))
            except ValueError:
                raise UsageError(f"bad layer index {part!r}") from None
    return tuple(sorted(set(layers)))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sgks-extract",
        description="Capture per-layer attention and residual-norm signals "
        "from a transformer into SGKT trace files.",
    )
    parser.add_argument(
        "--model",
        required=True,
        help="checkpoint identifier or local checkpoint directory",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--prompts",
        type=Path,
        help="JSONL file of prompts (id, statement, optional context/label)",
    )
    source.add_argument(
        "--probe-pairs",
        type=int,
        metavar="N",
        help="use N built-in supported/contradicted probe pairs instead "
        "of a prompts file",
    )
    parser.add_argument(
        "--layers",
        required=True,
        help="layer selection, e.g. '2,3,5' or inclusive ranges '2:5'",
    )
    parser.add_argument(
        "--out", required=True, type=Path, help="output directory for traces"
    )
    parser.add_argument(
        "--signal-point",
        choices=("post", "pre"),
        default="post",
        help="take the residual-norm signal after (post) or before (pre) "
        "each selected block [default: post]",
    )
    parser.add_argument(
        "--hidden",
        action="store_true",
        help="also store the per-token hidden-state matrices",
    )
    parser.add_argument(
        "--include-bare",
        action="store_true",
        help="with --probe-pairs, add context-free unlabeled prompts",
    )
    parser.add_argument(
        "--batch-size", type=int, default=8, help="prompts per forward pass"
    )
    parser.add_argument(
        "--device", default="cpu", help="torch device [default: cpu]"
    )
    parser.add_argument(
        "--dtype",
        choices=("float32", "float16", "bfloat16"),
        default="float32",
        help="model compute precision (payloads are always float32)",
    )
    parser.add_argument(
        "--byte-tokenizer",
        action="store_true",
        help="tokenize prompts as raw UTF-8 bytes instead of loading the "
        "checkpoint's tokenizer",
    )
    return parser


def _resolve_model(args: argparse.Namespace):
    if not args.byte_tokenizer:
        return args.model
    from .capture import _load_checkpoint

    return (_load_checkpoint(args.model, args.dtype), ByteTokenizer())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.prompts is not None:
            prompts = load_prompts_jsonl(args.prompts)
        else:
            prompts = probe_prompts(
                n_pairs=args.probe_pairs, include_bare=args.include_bare
            )
        job = ExtractionJob(
            model=_resolve_model(args),
            prompts=tuple(prompts),
            layers=parse_layers(args.layers),
            out_dir=args.out,
            dtype=args.dtype,
            signal_point=args.signal_point,
            store_hidden=args.hidden,
            batch_size=args.batch_size,
            device=args.device,
        )
        result = extract(job)
    except UsageError as exc:
        print(f"sgks-extract: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ExtractorError, OSError) as exc:
        print(f"sgks-extract: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {len(result.files)} trace(s) and {result.manifest.name} "
        f"to {result.manifest.parent}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
