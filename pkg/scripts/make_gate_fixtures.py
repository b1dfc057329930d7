#!/usr/bin/env python3
"""Build a self-contained demo directory for the `sgks gate` subcommand.

Lays out a stored-trace directory, a question fixture, and a threshold band:

    store/            pre-generated traces keyed {question_id}__{ctx_id}.sgkt
    fixture.json      questions with first-attempt and retry context ids
    thresholds.json   decision band matching the stored traces' model id

The fixture is scripted so the two chain policies diverge: q2's first batch
is contradicted but its retry batch is supported, so --policy halt blocks at
q2 while --policy backtrack completes all three questions.
"""

import argparse
import json
import sys
from pathlib import Path

from sgks.gate import StoredTraceVerifier
from sgks.synth import Regime, SynthConfig, synth_trace

QUESTIONS = (
    # (question_id, question, {ctx_id: regime}, {retry ctx_id: regime})
    ("q1", "is the sky blue", {"ctx-a": Regime.SUPPORTED}, {}),
    (
        "q2",
        "is the ocean made of lava",
        {"ctx-b": Regime.CONTRADICTED},
        {"ctx-c": Regime.SUPPORTED},
    ),
    ("q3", "do objects fall downward", {"ctx-d": Regime.SUPPORTED}, {}),
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("gate_demo"))
    ap.add_argument("--seed", type=int, default=17)
    ap.add_argument("--tokens", type=int, default=48)
    args = ap.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    store = StoredTraceVerifier(args.out / "store")

    seed = args.seed
    entries = []
    for qid, question, contexts, retries in QUESTIONS:
        for batch in (contexts, retries):
            for ctx_id, regime in batch.items():
                trace = synth_trace(
                    SynthConfig(regime=regime, T=args.tokens, seed=seed)
                )
                store.put(qid, ctx_id, trace)
                seed += 1
        entries.append(
            {
                "id": qid,
                "question": question,
                "contexts": sorted(contexts),
                "retry_contexts": sorted(retries),
            }
        )

    fixture = args.out / "fixture.json"
    fixture.write_text(json.dumps({"questions": entries}, indent=2) + "\n")
    thresholds = args.out / "thresholds.json"
    thresholds.write_text(
        json.dumps({"tau_low": 0.15, "tau_high": 0.30, "model_id": "synthetic"}) + "\n"
    )

    print(f"wrote {fixture}, {thresholds}, and {seed - args.seed} stored traces")
    print("try both policies:")
    for policy in ("halt", "backtrack"):
        print(
            f"  python3 -m sgks gate {fixture} --store {args.out / 'store'}"
            f" --thresholds {thresholds} --policy {policy}"
            f" --audit {args.out / ('audit-' + policy + '.ndjson')}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
