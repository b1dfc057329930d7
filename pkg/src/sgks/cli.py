"""Command-line entry point: ``sgks <subcommand>``.

Subcommands
-----------
synth      emit a labeled synthetic SGKT dataset (one file per trace + manifest)
diag       per-layer diagnostics for traces, CSV or JSON
calibrate  labeled traces -> thresholds/calibration JSON
verify     one trace + thresholds -> verdict token and score on stdout
gate       scripted retrieval episodes over a trace store -> NDJSON audit log
sweep      cutoff / window / variant robustness sweeps -> CSV
stats      paired-contrast file -> bootstrap CI, permutation p, FDR verdicts
bench      latency percentiles for the diagnostic path

Exit codes: 0 success; 1 usage error (bad flags/arguments); 2 validation
error (inputs that parse but fail the contracts, including unreadable
files); 3 numerical error.  Errors print one machine-parseable line to
stderr: ``sgks: <ErrorClass>: <message>``.

Config precedence is flags > ``--config`` JSON file > defaults.  The
config file mirrors flag spellings, e.g. ``{"window": "2:5", "cutoff":
"mass:20", "laplacian": "sym", "agg": "mass", "seed": 7}``.  Set
``SGKS_LOG=debug`` (or info/warning/error) for diagnostics on stderr.

Every seeded subcommand is bit-reproducible on one platform, except that
``bench`` measures wall time -- its random inputs reproduce, its
milliseconds do not.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import zlib
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bench import DEFAULT_T_GRID, bench_latency
from .calibration import CalibrationSet, calibrate_full, load_thresholds, stratified_split
from .diagnostics import (
    DEFAULT_WINDOW,
    CutoffSpec,
    DiagConfig,
    early_window,
    hfer_score,
    layer_diagnostics,
)
from .errors import (
    ConfigurationError,
    NumericalError,
    SgksError,
    UsageError,
    ValidationError,
)
from .gate import (
    AuditLog,
    ChainPolicy,
    RetrievedContext,
    StoredTraceVerifier,
    classify,
    run_chain,
)
from .graphs import AggregationScheme, LaplacianVariant
from .stats import bh_fdr, bootstrap_ci, paired_permutation
from .sweeps import (
    DEFAULT_C_GRID,
    DEFAULT_WINDOW_GRID,
    CSV_HEADER,
    cutoff_sweep,
    sweep_rows,
    variant_compare,
    window_shift,
    write_sweep_csv,
)
from .synth import SynthConfig, synth_dataset
from .traces import load_traces, write_dataset

log = logging.getLogger("sgks.cli")

_CONFIG_KEYS = {"window", "cutoff", "laplacian", "agg", "seed", "format", "workers"}


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def _parse_window(text: str) -> tuple[int, ...]:
    try:
        if ":" in text:
            lo_s, hi_s = text.split(":", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(
            f"bad window {text!r}; expected LO:HI (inclusive) or a comma list"
        ) from None


def _parse_cutoff(text: str) -> CutoffSpec:
    mode, sep, value = text.partition(":")
    if sep:
        try:
            if mode == "mass":
                return CutoffSpec.mass(float(value))
            if mode == "count":
                return CutoffSpec.count(float(value))
        except (ValueError, ConfigurationError) as exc:
            raise UsageError(f"bad cutoff {text!r}: {exc}") from None
    raise UsageError(f"bad cutoff {text!r}; expected mass:PERCENT or count:KAPPA")


class _Settings:
    """Flags > config-file JSON > defaults, with typo checking."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            try:
                self.file = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config file {cfg_path}: {exc}") from None
            if not isinstance(self.file, dict):
                raise UsageError(f"config file {cfg_path} must hold a JSON object")
            unknown = set(self.file) - _CONFIG_KEYS
            if unknown:
                raise UsageError(
                    f"config file has unknown keys: {', '.join(sorted(unknown))}"
                )

    def get(self, key: str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.file:
            return self.file[key]
        return default

    def diag_config(self) -> DiagConfig:
        window = self.get("window")
        cutoff = self.get("cutoff")
        try:
            return DiagConfig(
                window=_parse_window(str(window)) if window else DEFAULT_WINDOW,
                cutoff=_parse_cutoff(str(cutoff)) if cutoff else CutoffSpec(),
                variant=LaplacianVariant(self.get("laplacian", "sym")),
                aggregation=AggregationScheme(self.get("agg", "mass")),
            )
        except (ConfigurationError, ValueError) as exc:
            raise UsageError(f"bad diagnostics settings: {exc}") from None

    def seed(self, default: int = 0) -> int:
        return int(self.get("seed", default))

    def workers(self) -> int:
        return max(1, int(self.get("workers", os.cpu_count() or 1)))


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Map preserving input order; threads share numpy's released GIL."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _emit_rows(rows: list[dict], fields: Sequence[str], fmt: str, out: str | None):
    if fmt == "json":
        payload = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_csv_cell(row[f]) for f in fields])
        payload = buf.getvalue()
    if out:
        Path(out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)


# ---------------------------------------------------------------- subcommands


def _cmd_synth(args) -> int:
    settings = _Settings(args)
    if not args.out:
        raise UsageError("synth needs --out DIRECTORY")
    template = SynthConfig(
        T=args.T, H=args.heads, n_layers=args.layers, seed=settings.seed()
    )
    traces = synth_dataset(args.n_per_class, template)
    manifest = write_dataset(traces, args.out)
    print(manifest)
    return 0


_DIAG_FIELDS = ("prompt_id", "layer", "hfer", "se", "dirichlet", "fiedler", "energy_trace")
_SUMMARY_FIELDS = ("prompt_id", "h", "label")


def _cmd_diag(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    traces = load_traces(args.input)
    log.info("diag over %d traces, window %s", len(traces), config.window)
    results = _pmap(lambda t: layer_diagnostics(t, config), traces, settings.workers())
    rows: list[dict] = []
    if args.summary:
        for trace, diags in zip(traces, results):
            rows.append(
                {
                    "prompt_id": trace.prompt_id,
                    "h": early_window(diags, config.window).hfer_mean,
                    "label": trace.label,
                }
            )
        fields = _SUMMARY_FIELDS
    else:
        for trace, diags in zip(traces, results):
            for d in diags:
                rows.append(
                    {
                        "prompt_id": trace.prompt_id,
                        "layer": d.layer_index,
                        "hfer": d.hfer,
                        "se": d.se,
                        "dirichlet": d.dirichlet,
                        "fiedler": d.fiedler,
                        "energy_trace": d.energy_trace,
                    }
                )
        fields = _DIAG_FIELDS
    _emit_rows(rows, fields, settings.get("format", "csv"), settings.get("out"))
    return 0


def _cmd_calibrate(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    traces = load_traces(args.input)
    cal = CalibrationSet.from_traces(traces, config=config)
    train, holdout = stratified_split(
        cal, holdout_fraction=args.holdout_fraction, seed=settings.seed()
    )
    result = calibrate_full(train, holdout, q=args.q, ece_target=args.ece_target)
    payload = result.dumps() + "\n"
    out = settings.get("out")
    if out:
        Path(out).write_text(payload, encoding="utf-8")
        print(
            f"tau_low={result.thresholds.tau_low:.6f} "
            f"tau_high={result.thresholds.tau_high:.6f} "
            f"ece={result.ece:.4f} auc={result.holdout_auc:.4f} "
            f"flags={','.join(result.flags) or '-'}"
        )
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_verify(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    traces = load_traces(args.input)
    if len(traces) != 1:
        raise ValidationError(f"verify expects exactly one trace, got {len(traces)}")
    thresholds = load_thresholds(args.thresholds)
    h = hfer_score(traces[0], config)
    verdict = classify(h, thresholds)
    print(f"{verdict.value.value.upper()} {h:.12g}")
    return 0


class _FixtureRetriever:
    """Retriever scripted by the gate fixture: attempt 0 serves "contexts",
    attempt 1 serves "retry_contexts".  A backtrack into a missing or empty
    retry batch surfaces as an EpisodeError, ending the run loudly rather
    than inventing candidates."""

    def __init__(self, entries: list[dict]):
        self.by_question = {e["question"]: e for e in entries}

    def retrieve(self, question: str, attempt: int) -> list[RetrievedContext]:
        entry = self.by_question[question]
        ids = entry.get("contexts", []) if attempt == 0 else entry.get("retry_contexts", [])
        texts = entry.get("texts", {})
        return [RetrievedContext(ctx_id=c, text=texts.get(c, c)) for c in ids]


def _cmd_gate(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    try:
        fixture = json.loads(Path(args.fixture).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"gate fixture is not valid JSON: {exc}") from None
    entries = fixture.get("questions")
    if not isinstance(entries, list) or not entries:
        raise ValidationError('gate fixture needs a non-empty "questions" list')
    for i, entry in enumerate(entries):
        if "question" not in entry or "id" not in entry:
            raise ValidationError(f'fixture question #{i} lacks "id"/"question"')
    thresholds = load_thresholds(args.thresholds)
    model = StoredTraceVerifier(args.store)
    retriever = _FixtureRetriever(entries)
    with AuditLog(args.audit) as audit:
        chain = run_chain(
            [e["question"] for e in entries],
            retriever,
            model,
            thresholds,
            policy=ChainPolicy(args.policy),
            config=config,
            question_ids=[e["id"] for e in entries],
            audit=audit,
        )
    for episode in chain.episodes:
        state = "ABSTAIN" if episode.abstained else "ANSWER"
        print(f"{episode.question_id}\t{state}\t{episode.answer or ''}")
    print(
        f"completed={chain.completed} blocked={chain.blocked} "
        f"backtracks={chain.backtracks} audit={args.audit}"
    )
    return 0


def _cmd_sweep(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    traces = load_traces(args.input)
    seed = settings.seed()
    workers = settings.workers()
    if args.axis == "cutoff":
        try:
            grid = (
                tuple(float(c) for c in args.grid.split(","))
                if args.grid
                else DEFAULT_C_GRID
            )
        except ValueError:
            raise UsageError(f"bad cutoff grid {args.grid!r}") from None
        report = cutoff_sweep(
            traces, grid, config=config, n_resamples=args.n_resamples,
            seed=seed, workers=workers,
        )
    elif args.axis == "window":
        windows = (
            tuple(_parse_window(w) for w in args.grid.split(","))
            if args.grid
            else DEFAULT_WINDOW_GRID
        )
        report = window_shift(
            traces, windows, config=config, n_resamples=args.n_resamples,
            seed=seed, workers=workers,
        )
    else:
        report = variant_compare(
            traces, config=config, n_resamples=args.n_resamples,
            seed=seed, workers=workers,
        )
    fmt = settings.get("format", "csv")
    out = settings.get("out")
    if fmt == "json":
        rows = [dict(zip(CSV_HEADER, row)) for row in sweep_rows(report)]
        _emit_rows(rows, CSV_HEADER, "json", out)
    elif out:
        write_sweep_csv(report, out)
    else:
        write_sweep_csv(report, sys.stdout)
    return 0


_STATS_FIELDS = ("contrast", "estimate", "ci_lo", "ci_hi", "p_raw", "rejected")


def _cmd_stats(args) -> int:
    settings = _Settings(args)
    try:
        payload = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"stats input is not valid JSON: {exc}") from None
    contrasts = payload.get("contrasts") if isinstance(payload, dict) else payload
    if not isinstance(contrasts, list) or not contrasts:
        raise ValidationError(
            'stats input needs a non-empty "contrasts" list of {name, a, b}'
        )
    seed = settings.seed()
    rows: list[dict] = []
    p_values = []
    for i, entry in enumerate(contrasts):
        try:
            name = str(entry["name"])
            a = np.asarray(entry["a"], dtype=np.float64)
            b = np.asarray(entry["b"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"contrast #{i} is malformed: {exc}") from None
        sub_seed = seed * 1_000_003 + zlib.crc32(name.encode("utf-8"))
        diff = b - a  # validated for shape inside the stats calls
        ci = bootstrap_ci(
            diff, np.mean, n_resamples=args.n_resamples, seed=sub_seed, vectorized=True
        )
        perm = paired_permutation(a, b, n_shuffles=args.n_shuffles, seed=sub_seed)
        p_values.append(perm.p_value)
        rows.append(
            {
                "contrast": name,
                "estimate": float(np.mean(diff)),
                "ci_lo": ci.lo,
                "ci_hi": ci.hi,
                "p_raw": perm.p_value,
                "rejected": None,
            }
        )
    rejected = bh_fdr(np.array(p_values), q=args.q)
    for row, rej in zip(rows, rejected):
        row["rejected"] = int(rej)
    _emit_rows(rows, _STATS_FIELDS, settings.get("format", "csv"), settings.get("out"))
    return 0


_BENCH_FIELDS = (
    "T", "H", "n_layers", "repeats",
    "eig_p50_ms", "eig_p95_ms", "post_p50_ms", "post_p95_ms",
    "full_p50_ms", "full_p95_ms",
)


def _cmd_bench(args) -> int:
    settings = _Settings(args)
    config = settings.diag_config()
    try:
        grid = (
            tuple(int(t) for t in args.grid.split(","))
            if args.grid
            else DEFAULT_T_GRID
        )
    except ValueError:
        raise UsageError(f"bad T grid {args.grid!r}") from None
    rows = bench_latency(
        grid,
        H=args.heads,
        n_layers=args.layers,
        repeats=args.repeats,
        config=config,
        seed=settings.seed(),
    )
    _emit_rows(
        [r.to_dict() for r in rows],
        _BENCH_FIELDS,
        settings.get("format", "csv"),
        settings.get("out"),
    )
    return 0


# ------------------------------------------------------------------- plumbing


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with default settings")
    sub.add_argument("--window", help="layer window, e.g. 2:5")
    sub.add_argument("--cutoff", help="high-mode cutoff, e.g. mass:20 or count:0.2")
    sub.add_argument("--laplacian", choices=["sym", "rw"])
    sub.add_argument("--agg", choices=["uniform", "mass"])
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.add_argument("--format", choices=["csv", "json"])
    sub.add_argument("--workers", type=int, help="worker threads for batch work")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgks", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="emit a labeled synthetic SGKT dataset")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--T", type=int, default=SynthConfig().T)
    p.add_argument("--heads", type=int, default=SynthConfig().H)
    p.add_argument("--layers", type=int, default=SynthConfig().n_layers)
    _add_common(p)
    p.set_defaults(handler=_cmd_synth)

    p = subs.add_parser("diag", help="per-layer diagnostics to CSV/JSON")
    p.add_argument("input", help=".sgkt file, manifest.json, or dataset directory")
    p.add_argument("--summary", action="store_true", help="one row per trace")
    _add_common(p)
    p.set_defaults(handler=_cmd_diag)

    p = subs.add_parser("calibrate", help="fit thresholds from labeled traces")
    p.add_argument("input")
    p.add_argument("--holdout-fraction", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.15, help="initial band quantile")
    p.add_argument("--ece-target", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(handler=_cmd_calibrate)

    p = subs.add_parser("verify", help="classify one trace against thresholds")
    p.add_argument("input", help="single-trace .sgkt file")
    p.add_argument("--thresholds", required=True, help="calibration JSON")
    _add_common(p)
    p.set_defaults(handler=_cmd_verify)

    p = subs.add_parser("gate", help="run scripted episodes; write an audit log")
    p.add_argument("fixture", help="JSON fixture with questions and context ids")
    p.add_argument("--store", required=True, help="trace store directory")
    p.add_argument("--thresholds", required=True)
    p.add_argument("--audit", required=True, help="NDJSON audit output path")
    p.add_argument("--policy", choices=["halt", "backtrack"], default="halt")
    _add_common(p)
    p.set_defaults(handler=_cmd_gate)

    p = subs.add_parser("sweep", help="robustness sweeps over one axis")
    p.add_argument("input")
    p.add_argument("--axis", choices=["cutoff", "window", "variant"], required=True)
    p.add_argument("--grid", help='e.g. "10,15,20,25,30,40" or "1:4,2:5,3:6"')
    p.add_argument("--n-resamples", type=int, default=2000)
    _add_common(p)
    p.set_defaults(handler=_cmd_sweep)

    p = subs.add_parser("stats", help="paired contrasts -> CI/permutation/FDR")
    p.add_argument("input", help='JSON: {"contrasts": [{name, a, b}, ...]}')
    p.add_argument("--q", type=float, default=0.05, help="FDR level")
    p.add_argument("--n-resamples", type=int, default=2000)
    p.add_argument("--n-shuffles", type=int, default=10_000)
    _add_common(p)
    p.set_defaults(handler=_cmd_stats)

    p = subs.add_parser("bench", help="latency percentiles for the pipeline")
    p.add_argument("--grid", help='token counts, e.g. "64,128,256,512"')
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repeats", type=int, default=20)
    _add_common(p)
    p.set_defaults(handler=_cmd_bench)

    return parser


def _init_logging() -> None:
    level_name = os.environ.get("SGKS_LOG", "").strip()
    if not level_name:
        return
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _fail(exc: BaseException) -> None:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"sgks: {type(exc).__name__}: {message}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _init_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args) or 0
    except UsageError as exc:
        _fail(exc)
        return 1
    except NumericalError as exc:
        _fail(exc)
        return 3
    except SgksError as exc:
        _fail(exc)
        return 2
    except OSError as exc:
        _fail(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
