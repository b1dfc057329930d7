"""Latency benchmarking for the diagnostic path.

Times three segments of the per-trace pipeline over a grid of token
counts:

* ``eig``  — graph construction plus eigendecomposition for every
  window layer (the cubic part),
* ``post`` — the decision path with spectra precomputed: GFT, the
  high-frequency ratio, spectral entropy, window meanisation, and the
  threshold classification (the part that has to be fast at answer
  time),
* ``full`` — ``layer_diagnostics`` end to end.

Times are wall-clock milliseconds per trace; each row reports p50/p95
over ``repeats`` runs after one untimed warmup.  The benchmark input is
a random softmax-attention trace, since cost depends only on shape.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .diagnostics import (
    DEFAULT_CONFIG,
    DiagConfig,
    gft,
    hfer,
    layer_diagnostics,
    spectral_entropy,
)
from .errors import ConfigurationError
from .gate import WIDE_MARGIN_THRESHOLDS, Thresholds, classify
from .graphs import aggregate_heads, eig_spectrum, normalized_laplacian
from .traces import ActivationTrace, LayerRecord

DEFAULT_T_GRID = (64, 128, 256, 512)


@dataclass(frozen=True)
class BenchRow:
    """Latency percentiles (milliseconds per trace) for one token count."""

    T: int
    H: int
    n_layers: int
    repeats: int
    eig_p50_ms: float
    eig_p95_ms: float
    post_p50_ms: float
    post_p95_ms: float
    full_p50_ms: float
    full_p95_ms: float

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "H": self.H,
            "n_layers": self.n_layers,
            "repeats": self.repeats,
            "eig_p50_ms": self.eig_p50_ms,
            "eig_p95_ms": self.eig_p95_ms,
            "post_p50_ms": self.post_p50_ms,
            "post_p95_ms": self.post_p95_ms,
            "full_p50_ms": self.full_p50_ms,
            "full_p95_ms": self.full_p95_ms,
        }


def _random_trace(T: int, H: int, n_layers: int, rng: np.random.Generator) -> ActivationTrace:
    layers = []
    for w in range(n_layers):
        logits = rng.standard_normal((T, T, H))
        rows = np.exp(logits - logits.max(axis=1, keepdims=True))
        rows /= rows.sum(axis=1, keepdims=True)
        layers.append(
            LayerRecord(
                layer_index=w,
                attention=rows.astype(np.float32),
                signal=rng.standard_normal(T).astype(np.float32),
            )
        )
    return ActivationTrace(model_id="bench", prompt_id=f"bench-T{T}", layers=tuple(layers))


def _time_ms(fn: Callable[[], object], repeats: int) -> tuple[float, float]:
    fn()  # warmup: BLAS thread pools, allocator, caches
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    return (
        float(np.percentile(times, 50) * 1e3),
        float(np.percentile(times, 95) * 1e3),
    )


def bench_latency(
    T_grid: Sequence[int] = DEFAULT_T_GRID,
    H: int = 4,
    n_layers: int = 4,
    repeats: int = 20,
    *,
    config: DiagConfig = DEFAULT_CONFIG,
    thresholds: Thresholds = WIDE_MARGIN_THRESHOLDS,
    seed: int = 0,
) -> list[BenchRow]:
    """Measure the three pipeline segments across token counts.

    The trace carries layers 0..n_layers-1, so the window is rewritten
    to cover exactly those layers; cutoff/aggregation/variant come from
    ``config`` unchanged.
    """
    if not T_grid:
        raise ConfigurationError("T grid is empty")
    if min(T_grid) < 2:
        raise ConfigurationError(f"T grid entries must be at least 2: {list(T_grid)}")
    if repeats < 1:
        raise ConfigurationError(f"repeats must be positive, got {repeats}")
    if n_layers < 1:
        raise ConfigurationError(f"n_layers must be positive, got {n_layers}")
    bench_config = replace(config, window=tuple(range(n_layers)))
    rng = np.random.default_rng(seed)
    rows = []
    for T in T_grid:
        trace = _random_trace(int(T), H, n_layers, rng)

        def eig_pass():
            for rec in trace.layers:
                eig_spectrum(
                    normalized_laplacian(
                        aggregate_heads(rec, bench_config.aggregation),
                        bench_config.variant,
                    )
                )

        spectra = [
            (
                eig_spectrum(
                    normalized_laplacian(
                        aggregate_heads(rec, bench_config.aggregation),
                        bench_config.variant,
                    )
                ),
                rec.signal.astype(np.float64),
            )
            for rec in trace.layers
        ]

        def post_pass():
            ratios = []
            for spectrum, x in spectra:
                powers = gft(spectrum, x)
                ratios.append(hfer(powers, bench_config.cutoff))
                spectral_entropy(powers)
            classify(float(np.mean(ratios)), thresholds)

        def full_pass():
            layer_diagnostics(trace, bench_config)

        eig_p50, eig_p95 = _time_ms(eig_pass, repeats)
        post_p50, post_p95 = _time_ms(post_pass, repeats)
        full_p50, full_p95 = _time_ms(full_pass, repeats)
        rows.append(
            BenchRow(
                T=int(T),
                H=H,
                n_layers=n_layers,
                repeats=repeats,
                eig_p50_ms=eig_p50,
                eig_p95_ms=eig_p95,
                post_p50_ms=post_p50,
                post_p95_ms=post_p95,
                full_p50_ms=full_p50,
                full_p95_ms=full_p95,
            )
        )
    return rows
