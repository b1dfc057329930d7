#!/usr/bin/env python3
"""Headline separation experiment on the bimodal surrogate dataset.

Generates a balanced supported/contradicted dataset, scores every trace with
the windowed high-frequency ratio, fits the full calibration protocol on a
stratified split, and pushes each trace through the decision gate under the
fitted band. Prints per-class score statistics, ROC AUC, decisive-zone ECE,
and the misclassification count — the numbers a deployment band is judged by.

    python3 scripts/synthetic_eval.py --n-per-class 59 --seed 202
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from sgks.calibration import CalibrationSet, calibrate_full, roc_auc, stratified_split
from sgks.diagnostics import hfer_score
from sgks.gate import SupportVerdict, gate_step
from sgks.synth import SynthConfig, synth_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-per-class", type=int, default=59)
    ap.add_argument("--seed", type=int, default=202)
    ap.add_argument("--tokens", type=int, default=64, help="tokens per trace")
    ap.add_argument("--layers", type=int, default=8, help="layers per trace")
    ap.add_argument(
        "--thresholds-out",
        type=Path,
        default=None,
        help="write the fitted calibration result JSON here",
    )
    args = ap.parse_args(argv)

    cfg = SynthConfig(T=args.tokens, n_layers=args.layers, seed=args.seed)
    traces = synth_dataset(args.n_per_class, cfg)
    scores = np.array([hfer_score(t) for t in traces])
    labels = np.array([t.label for t in traces])

    sup, con = scores[labels == 1], scores[labels == 0]
    print(f"dataset: {len(traces)} traces (T={args.tokens}, {args.layers} layers)")
    print(f"  supported     mean={sup.mean():.4f} sd={sup.std(ddof=1):.4f}")
    print(f"  contradicted  mean={con.mean():.4f} sd={con.std(ddof=1):.4f}")

    cal = CalibrationSet(scores, labels, model_id="synthetic")
    print(f"  AUC = {roc_auc(cal).auc:.6f}")

    train, holdout = stratified_split(cal, 0.5, seed=args.seed)
    result = calibrate_full(train, holdout)
    band = result.thresholds
    print(
        f"calibrated band: tau_low={band.tau_low:.4f} tau_high={band.tau_high:.4f}"
        f" (holdout AUC {result.holdout_auc:.4f}, ECE {result.ece:.4f},"
        f" flags {sorted(result.flags) or '-'})"
    )

    # a decisive error puts a trace in the *opposite* decisive zone; landing
    # in the uncertain band is a deferral, not an error
    wrong = deferred = 0
    for trace, h in zip(traces, scores):
        verdict = gate_step([h], band).verdicts[0].value
        wanted = (
            SupportVerdict.SUPPORTED if trace.label == 1 else SupportVerdict.CONTRADICTED
        )
        if verdict is SupportVerdict.UNCERTAIN:
            deferred += 1
        elif verdict is not wanted:
            wrong += 1
            print(f"  WRONG ZONE {trace.prompt_id}: h={h:.4f} -> {verdict.value}")
    print(
        f"gate outcome under fitted band: {wrong}/{len(traces)} decisive errors,"
        f" {deferred} deferred to the uncertain zone"
    )

    if args.thresholds_out is not None:
        args.thresholds_out.write_text(result.dumps() + "\n", encoding="utf-8")
        print(f"wrote {args.thresholds_out}")
    return 0 if wrong == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
