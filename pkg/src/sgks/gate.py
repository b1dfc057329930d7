"""Three-zone support verdicts and the abstain-capable retrieval gate.

``classify`` maps a high-frequency energy ratio onto SUPPORTED / UNCERTAIN /
CONTRADICTED with decisive boundaries, ``gate_step`` lifts the rule to a batch
of retrieved candidates and decides ANSWER vs ABSTAIN (the kill switch), and
``run_episode`` / ``run_chain`` wire it into abstract retriever and
verifier-model interfaces with append-only NDJSON audit logging.

The primary toolkit never talks to a live model: ``VerifierModel`` is a
protocol, and ``StoredTraceVerifier`` is the file-backed stub that serves
pre-generated traces keyed by (question_id, ctx_id).
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from .diagnostics import DEFAULT_CONFIG, DiagConfig, hfer_score
from .errors import (
    ConfigurationError,
    EpisodeError,
    FormatError,
    SgksError,
    ValidationError,
)
from .traces import ActivationTrace, read_trace, write_trace

log = logging.getLogger(__name__)

_VERDICT_RANK = {"contradicted": 0, "uncertain": 1, "supported": 2}


class SupportVerdict(Enum):
    """The three zones, ordered CONTRADICTED < UNCERTAIN < SUPPORTED."""

    CONTRADICTED = "contradicted"
    UNCERTAIN = "uncertain"
    SUPPORTED = "supported"

    @property
    def rank(self) -> int:
        return _VERDICT_RANK[self.value]

    def __lt__(self, other):
        if isinstance(other, SupportVerdict):
            return self.rank < other.rank
        return NotImplemented

    def __le__(self, other):
        if isinstance(other, SupportVerdict):
            return self.rank <= other.rank
        return NotImplemented

    def __gt__(self, other):
        if isinstance(other, SupportVerdict):
            return self.rank > other.rank
        return NotImplemented

    def __ge__(self, other):
        if isinstance(other, SupportVerdict):
            return self.rank >= other.rank
        return NotImplemented


class GateAction(Enum):
    ANSWER = "answer"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class Thresholds:
    """Calibrated decision band; model_id records calibration provenance."""

    tau_low: float
    tau_high: float
    model_id: str = "uncalibrated"

    def __post_init__(self):
        if not (math.isfinite(self.tau_low) and math.isfinite(self.tau_high)):
            raise ConfigurationError("thresholds must be finite")
        if not 0.0 <= self.tau_low < self.tau_high <= 1.0:
            raise ConfigurationError(
                "need 0 <= tau_low < tau_high <= 1, got "
                f"({self.tau_low}, {self.tau_high})"
            )
        if not self.model_id:
            raise ConfigurationError("model_id must be non-empty")


# Deployment band for the llama-3.2-1b calibration this toolkit ships with;
# treated as a fixture wherever a wide-margin default is wanted.
WIDE_MARGIN_THRESHOLDS = Thresholds(0.15, 0.30, model_id="llama-3.2-1b")


@dataclass(frozen=True)
class Verdict:
    """One zone assignment together with the score that produced it."""

    value: SupportVerdict
    h: float


def classify(h: float, thresholds: Thresholds) -> Verdict:
    """Three-zone rule with decisive boundaries (>= high, <= low)."""
    h = float(h)
    if not math.isfinite(h):
        raise ValidationError(f"score must be finite, got {h}")
    if h >= thresholds.tau_high:
        zone = SupportVerdict.SUPPORTED
    elif h <= thresholds.tau_low:
        zone = SupportVerdict.CONTRADICTED
    else:
        zone = SupportVerdict.UNCERTAIN
    return Verdict(zone, h)


@dataclass(frozen=True)
class GateOutcome:
    """Batch decision: kept evidence, per-candidate verdicts, kill switch."""

    decision: GateAction
    kept_contexts: tuple[int, ...]  # 0-based indices into the scored batch
    scores: tuple[float, ...]
    verdicts: tuple[Verdict, ...]
    kill_switch_fired: bool
    uncertain_only: bool


def gate_step(scores, thresholds: Thresholds) -> GateOutcome:
    """Decide ANSWER vs ABSTAIN for one batch of candidate scores.

    Keeps every supported candidate (h >= tau_high). Abstains — fires the
    kill switch — only when nothing is supported and every score sits at or
    below tau_low. A batch whose best score lands in the uncertain band is
    answered with an empty evidence set and flagged ``uncertain_only``; the
    uncertain zone requests oversight rather than forcing a halt.
    """
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("gate_step needs a non-empty 1-D batch of scores")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scores must be finite")
    verdicts = tuple(classify(h, thresholds) for h in arr)
    kept = tuple(
        i for i, v in enumerate(verdicts) if v.value is SupportVerdict.SUPPORTED
    )
    if not kept and float(arr.max()) <= thresholds.tau_low:
        decision = GateAction.ABSTAIN
    else:
        decision = GateAction.ANSWER
    return GateOutcome(
        decision=decision,
        kept_contexts=kept,
        scores=tuple(float(h) for h in arr),
        verdicts=verdicts,
        kill_switch_fired=decision is GateAction.ABSTAIN,
        uncertain_only=decision is GateAction.ANSWER and not kept,
    )


# --------------------------------------------------------------------------
# episode plumbing


@dataclass(frozen=True)
class RetrievedContext:
    """One retrieval candidate: stable id plus the context text."""

    ctx_id: str
    text: str


@dataclass(frozen=True)
class CandidatePrompt:
    """Rendered verification prompt for one (question, context) pairing."""

    question_id: str
    ctx_id: str
    text: str


def render_prompt(context: str, statement: str) -> str:
    """Verification prompt pairing one context with the statement under test."""
    return f"Context: {context} Statement: {statement}"


class Retriever(Protocol):
    def retrieve(self, question: str, attempt: int) -> Sequence[RetrievedContext]:
        """Candidate contexts for the question; attempt > 0 asks for the
        next-best batch (backtracking)."""
        ...


class VerifierModel(Protocol):
    def trace(self, prompt: CandidatePrompt) -> ActivationTrace:
        ...

    def generate(self, question: str, contexts: Sequence[RetrievedContext]) -> str:
        ...


class AuditLog:
    """Append-only NDJSON sink for gate decisions.

    One JSON object per line; every append is a single write followed by a
    flush, so concurrent episode writers interleave at record granularity.
    The clock is injectable so tests can pin timestamps.
    """

    def __init__(self, path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self._clock = clock
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> dict:
        stamped = {"ts": float(self._clock()), **record}
        self._fh.write(json.dumps(stamped, separators=(",", ":")) + "\n")
        self._fh.flush()
        return stamped

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "AuditLog":
        return self

    def __exit__(self, *exc) -> bool:
        self.close()
        return False


def _audit_record(question_id, ctx_ids, outcome, thresholds, excluded, warnings):
    record = {
        "question_id": question_id,
        "candidates": [
            {"ctx_id": cid, "h": verdict.h, "verdict": verdict.value.value}
            for cid, verdict in zip(ctx_ids, outcome.verdicts)
        ],
        "decision": outcome.decision.value,
        "kill_switch": outcome.kill_switch_fired,
        "tau_low": thresholds.tau_low,
        "tau_high": thresholds.tau_high,
        "model_id": thresholds.model_id,
        "uncertain_only": outcome.uncertain_only,
        "excluded": list(excluded),
    }
    if warnings:
        record["warnings"] = list(warnings)
    return record


@dataclass(frozen=True)
class EpisodeResult:
    question_id: str
    attempt: int
    outcome: GateOutcome
    ctx_ids: tuple[str, ...]  # scored candidates, aligned with outcome.scores
    excluded: tuple[str, ...]  # candidates dropped for invalid traces
    answer: str | None  # None on abstention
    record: dict  # audit record (timestamped when a log was attached)

    @property
    def abstained(self) -> bool:
        return self.outcome.decision is GateAction.ABSTAIN


def run_episode(
    question: str,
    retriever: Retriever,
    model: VerifierModel,
    thresholds: Thresholds,
    config: DiagConfig = DEFAULT_CONFIG,
    *,
    question_id: str | None = None,
    statement_of: Callable[[str], str] | None = None,
    audit: AuditLog | None = None,
    attempt: int = 0,
) -> EpisodeResult:
    """Retrieve, verify every candidate spectrally, and answer or abstain.

    Each candidate context is rendered into a verification prompt, traced by
    the model, and scored with the windowed high-frequency energy ratio.
    Candidates whose traces fail validation are excluded (ids land in the
    audit record) and the episode proceeds with the rest; retrieval failure
    or a fully-excluded batch raises EpisodeError. Exactly one audit record
    is produced per episode.
    """
    qid = question_id if question_id is not None else question
    statement = statement_of(question) if statement_of is not None else question
    try:
        contexts = list(retriever.retrieve(question, attempt))
    except Exception as exc:
        raise EpisodeError(f"retriever failed for question {qid!r}: {exc}") from exc
    if not contexts:
        raise EpisodeError(f"retriever returned no candidates for question {qid!r}")

    scored_ctx: list[RetrievedContext] = []
    scores: list[float] = []
    excluded: list[str] = []
    warnings: list[str] = []
    for ctx in contexts:
        prompt = CandidatePrompt(qid, ctx.ctx_id, render_prompt(ctx.text, statement))
        try:
            trace = model.trace(prompt)
            h = hfer_score(trace, config)
        except EpisodeError:
            raise
        except SgksError as exc:
            log.debug("excluding candidate %s: %s", ctx.ctx_id, exc)
            excluded.append(ctx.ctx_id)
            continue
        if trace.model_id != thresholds.model_id:
            note = (
                f"trace model {trace.model_id!r} differs from threshold "
                f"calibration {thresholds.model_id!r}"
            )
            if note not in warnings:
                warnings.append(note)
        scored_ctx.append(ctx)
        scores.append(h)
    if not scores:
        raise EpisodeError(
            f"no candidate for question {qid!r} produced a valid trace "
            f"(excluded: {', '.join(excluded)})"
        )

    outcome = gate_step(scores, thresholds)
    record = _audit_record(
        qid, [c.ctx_id for c in scored_ctx], outcome, thresholds, excluded, warnings
    )
    if audit is not None:
        record = audit.append(record)
    answer = None
    if outcome.decision is GateAction.ANSWER:
        kept = [scored_ctx[i] for i in outcome.kept_contexts]
        answer = model.generate(question, kept)
    return EpisodeResult(
        question_id=qid,
        attempt=attempt,
        outcome=outcome,
        ctx_ids=tuple(c.ctx_id for c in scored_ctx),
        excluded=tuple(excluded),
        answer=answer,
        record=record,
    )


class ChainPolicy(Enum):
    HALT = "halt"
    BACKTRACK = "backtrack"


@dataclass(frozen=True)
class ChainResult:
    episodes: tuple[EpisodeResult, ...]  # every episode run, retries included
    answers: tuple[str, ...]  # one per completed step
    completed: int  # steps answered
    blocked: int  # steps stopped by the kill switch
    backtracks: int  # retries attempted
    halted_at: int | None  # step index where the chain stopped


def run_chain(
    questions: Sequence[str],
    retriever: Retriever,
    model: VerifierModel,
    thresholds: Thresholds,
    policy: ChainPolicy | str = ChainPolicy.HALT,
    config: DiagConfig = DEFAULT_CONFIG,
    *,
    question_ids: Sequence[str] | None = None,
    statement_of: Callable[[str], str] | None = None,
    audit: AuditLog | None = None,
) -> ChainResult:
    """Run a multi-step chain, stopping when the kill switch fires.

    halt: stop at the first abstention. backtrack: retry that step once with
    the retriever's next-best batch (attempt=1), then stop if it still
    abstains. Either way a blocked step ends the chain.
    """
    policy = ChainPolicy(policy)
    if not questions:
        raise ValidationError("run_chain needs at least one question")
    if question_ids is None:
        qids = [f"step-{i}" for i in range(len(questions))]
    else:
        qids = list(question_ids)
        if len(qids) != len(questions):
            raise ValidationError(
                f"{len(questions)} questions but {len(qids)} question_ids"
            )
    episodes: list[EpisodeResult] = []
    answers: list[str] = []
    backtracks = blocked = 0
    halted_at = None
    for i, (question, qid) in enumerate(zip(questions, qids)):
        result = run_episode(
            question, retriever, model, thresholds, config,
            question_id=qid, statement_of=statement_of, audit=audit, attempt=0,
        )
        episodes.append(result)
        if result.abstained and policy is ChainPolicy.BACKTRACK:
            backtracks += 1
            result = run_episode(
                question, retriever, model, thresholds, config,
                question_id=qid, statement_of=statement_of, audit=audit, attempt=1,
            )
            episodes.append(result)
        if result.abstained:
            blocked += 1
            halted_at = i
            break
        answers.append(result.answer)
    return ChainResult(
        episodes=tuple(episodes),
        answers=tuple(answers),
        completed=len(answers),
        blocked=blocked,
        backtracks=backtracks,
        halted_at=halted_at,
    )


def replay_audit(path) -> list[dict]:
    """Parse an NDJSON audit file, re-deriving every decision from its own
    scores and thresholds.

    Raises FormatError for unparseable lines and ValidationError for any
    record whose stored verdicts, decision, or kill-switch flag do not
    reproduce — the audit file is self-certifying.
    """
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"audit line {lineno}: invalid JSON ({exc})") from exc
        try:
            thresholds = Thresholds(rec["tau_low"], rec["tau_high"], rec["model_id"])
            candidates = rec["candidates"]
            scores = [c["h"] for c in candidates]
            stored = [(c["ctx_id"], c["verdict"]) for c in candidates]
            decision, kill = rec["decision"], rec["kill_switch"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"audit line {lineno}: missing field ({exc})") from exc
        outcome = gate_step(scores, thresholds)
        for (ctx_id, verdict), fresh in zip(stored, outcome.verdicts):
            if verdict != fresh.value.value:
                raise ValidationError(
                    f"audit line {lineno}: context {ctx_id!r} stored verdict "
                    f"{verdict!r} does not replay to {fresh.value.value!r}"
                )
        if decision != outcome.decision.value or bool(kill) != outcome.kill_switch_fired:
            raise ValidationError(
                f"audit line {lineno}: stored decision {decision!r} "
                f"(kill_switch={kill}) does not replay"
            )
        records.append(rec)
    return records


# --------------------------------------------------------------------------
# file-backed stub verifier

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def _safe_id(value: str, what: str) -> str:
    if not _SAFE_ID.match(value):
        raise ValidationError(
            f"{what} {value!r} is not filename-safe (need [A-Za-z0-9._-])"
        )
    return value


class StoredTraceVerifier:
    """VerifierModel stub serving pre-generated traces from a directory.

    Trace files are keyed ``{question_id}__{ctx_id}.sgkt``; a small
    ``store.json`` index remembers each trace's model id so reads restore it.
    ``generate`` is a canned deterministic summary — the primary toolkit
    never performs live inference. A missing key raises ValidationError,
    which run_episode treats as candidate exclusion.
    """

    INDEX_NAME = "store.json"

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _index_path(self) -> Path:
        return self.root / self.INDEX_NAME

    def _load_index(self) -> dict:
        path = self._index_path()
        if not path.exists():
            return {}
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt store index {path}: {exc}") from exc

    def path_for(self, question_id: str, ctx_id: str) -> Path:
        _safe_id(question_id, "question_id")
        _safe_id(ctx_id, "ctx_id")
        return self.root / f"{question_id}__{ctx_id}.sgkt"

    def put(self, question_id: str, ctx_id: str, trace: ActivationTrace) -> Path:
        """Store a trace under (question_id, ctx_id); write-temp-then-rename."""
        path = self.path_for(question_id, ctx_id)
        tmp = path.with_suffix(".sgkt.tmp")
        with open(tmp, "wb") as fh:
            write_trace(trace, fh)
        os.replace(tmp, path)
        index = self._load_index()
        index[f"{question_id}__{ctx_id}"] = {"model_id": trace.model_id}
        tmp_idx = self._index_path().with_suffix(".json.tmp")
        tmp_idx.write_text(json.dumps(index, indent=2), encoding="utf-8")
        os.replace(tmp_idx, self._index_path())
        return path

    def trace(self, prompt: CandidatePrompt) -> ActivationTrace:
        path = self.path_for(prompt.question_id, prompt.ctx_id)
        if not path.exists():
            raise ValidationError(
                f"no stored trace for ({prompt.question_id!r}, {prompt.ctx_id!r})"
            )
        entry = self._load_index().get(f"{prompt.question_id}__{prompt.ctx_id}", {})
        return read_trace(
            path,
            model_id=entry.get("model_id", "stored"),
            prompt_id=f"{prompt.question_id}__{prompt.ctx_id}",
        )

    def generate(self, question: str, contexts: Sequence[RetrievedContext]) -> str:
        if not contexts:
            return f"{question} -> [answered without kept evidence]"
        kept = ", ".join(ctx.ctx_id for ctx in contexts)
        return f"{question} -> grounded in [{kept}]"
