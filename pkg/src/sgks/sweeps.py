"""Robustness sweeps over cutoffs, layer windows, and graph variants.

Each sweep walks a labeled trace set along one axis of the analysis —
the high-frequency cutoff, the early-layer window, or the Laplacian /
head-aggregation variant — and reports, per setting, the class means of
the window-mean high-frequency energy ratio, the contradicted-minus-
supported contrast with a bootstrap CI, and the layer where the contrast
peaks.

Eigendecompositions are the expensive part, so each sweep decomposes
spectra once per (trace, graph variant) and reuses the modal powers
across every cutoff and window in the grid: a six-point cutoff grid
costs about one diagnostics pass, not six.

Contrast CIs are paired: traces are matched across classes in dataset
order and the CI is a BCa bootstrap of the mean per-pair difference.
That requires the same number of supported and contradicted traces (and
at least two of each).
"""

from __future__ import annotations

import csv
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .diagnostics import DEFAULT_CONFIG, CutoffSpec, DiagConfig, ModalPowers, gft, hfer
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    SizeError,
    ValidationError,
    WindowError,
)
from .graphs import (
    AggregationScheme,
    LaplacianVariant,
    aggregate_heads,
    eig_spectrum,
    fiedler,
    normalized_laplacian,
)
from .stats import ConfidenceInterval, bootstrap_ci, correlation
from .traces import ActivationTrace

DEFAULT_C_GRID = (10.0, 15.0, 20.0, 25.0, 30.0, 40.0)
DEFAULT_WINDOW_GRID = ((1, 2, 3, 4), (2, 3, 4, 5), (3, 4, 5, 6))

# |baseline contrast| below this and relative deviation is meaningless;
# fall back to absolute deviation.
RELATIVE_DEVIATION_FLOOR = 1e-9


class SweepAxis(Enum):
    CUTOFF = "cutoff"
    WINDOW = "window"
    VARIANT = "laplacian_variant"
    AGGREGATION = "aggregation"


@dataclass(frozen=True, eq=False)
class SweepCell:
    """One grid point: scores, class means, contrast, CI, peak layer.

    ``scores_*`` are per-trace window-mean high-frequency ratios in
    dataset order.  ``layer_contrast`` aligns with ``layers``; the
    variant sweep additionally carries the per-layer Fiedler-value
    contrast.  ``deviation_from_baseline`` is filled by the cutoff sweep
    only: relative to the baseline contrast, or absolute when the
    baseline is smaller than RELATIVE_DEVIATION_FLOOR.
    """

    setting: str
    scores_supported: np.ndarray
    scores_contradicted: np.ndarray
    mean_supported: float
    mean_contradicted: float
    contrast: float
    ci: ConfidenceInterval
    layers: tuple[int, ...]
    layer_contrast: np.ndarray
    peak_layer: int
    fiedler_contrast: np.ndarray | None = None
    fiedler_peak: int | None = None
    deviation_from_baseline: float | None = None

    def __post_init__(self):
        for name in ("scores_supported", "scores_contradicted", "layer_contrast"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.fiedler_contrast is not None:
            arr = np.array(self.fiedler_contrast, dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, "fiedler_contrast", arr)


@dataclass(frozen=True)
class PairAgreement:
    """How two grid settings agree on the direction and shape of the effect.

    Signs compare the window-mean contrast; peaks compare the argmax
    layer of |per-layer contrast|.  Correlation is a Pearson r between
    the per-layer contrast vectors on the layers the two settings share
    (NaN when fewer than three are shared).  The fiedler_* fields are
    populated by the variant sweep only.
    """

    setting_a: str
    setting_b: str
    sign_match: bool
    peak_match: bool
    contrast_correlation: float
    fiedler_sign_match: bool | None = None
    fiedler_peak_match: bool | None = None
    fiedler_correlation: float | None = None


@dataclass(frozen=True)
class AgreementSummary:
    """Rates pooled over every pair (and both metrics, when present).

    A sweep with a single cell has nothing to disagree with, so the
    rates degenerate to 1.0 and the correlation to 1.0.
    """

    sign_agreement_rate: float
    peak_agreement_rate: float
    mean_correlation: float
    pairs: tuple[PairAgreement, ...]


@dataclass(frozen=True)
class SweepReport:
    axis: SweepAxis
    cells: tuple[SweepCell, ...]
    baseline_setting: str
    agreement: AgreementSummary | None = None

    def cell(self, setting: str) -> SweepCell:
        for c in self.cells:
            if c.setting == setting:
                return c
        raise ValidationError(f"no sweep cell for setting {setting!r}")

    @property
    def baseline(self) -> SweepCell:
        return self.cell(self.baseline_setting)


def _split_classes(
    traces: Sequence[ActivationTrace],
) -> tuple[list[ActivationTrace], list[ActivationTrace]]:
    unlabeled = [t.prompt_id for t in traces if t.label is None]
    if unlabeled:
        raise ValidationError(
            f"sweeps need labeled traces; unlabeled: {', '.join(unlabeled[:5])}"
            + ("..." if len(unlabeled) > 5 else "")
        )
    supported = [t for t in traces if t.label == 1]
    contradicted = [t for t in traces if t.label == 0]
    if not supported or not contradicted:
        raise ValidationError(
            f"need both classes; got {len(supported)} supported / "
            f"{len(contradicted)} contradicted"
        )
    if len(supported) != len(contradicted):
        raise ValidationError(
            "the paired contrast CI needs balanced classes; got "
            f"{len(supported)} supported vs {len(contradicted)} contradicted"
        )
    if len(supported) < 2:
        raise SizeError("need at least two traces per class for a bootstrap CI")
    return supported, contradicted


def _check_layers(traces: Sequence[ActivationTrace], layers: Sequence[int]) -> None:
    deficient = []
    for t in traces:
        have = set(t.layer_indices)
        missing = [w for w in layers if w not in have]
        if missing:
            deficient.append(f"{t.prompt_id} (missing {missing})")
    if deficient:
        raise WindowError(
            f"layers {list(layers)} not present in every trace: "
            + "; ".join(deficient[:5])
            + ("..." if len(deficient) > 5 else "")
        )


def _trace_spectra(
    trace: ActivationTrace,
    layers: tuple[int, ...],
    aggregation: AggregationScheme,
    variant: LaplacianVariant,
) -> dict[int, tuple[ModalPowers, float]]:
    """Modal powers and Fiedler value per layer; one eigendecomposition each."""
    out = {}
    for w in layers:
        rec = trace.layer(w)
        spectrum = eig_spectrum(
            normalized_laplacian(aggregate_heads(rec, aggregation), variant)
        )
        powers = gft(spectrum, rec.signal.astype(np.float64))
        out[w] = (powers, fiedler(spectrum))
    return out


def _dataset_spectra(
    traces: Sequence[ActivationTrace],
    layers: tuple[int, ...],
    aggregation: AggregationScheme,
    variant: LaplacianVariant,
    workers: int,
) -> list[dict[int, tuple[ModalPowers, float]]]:
    if workers <= 1:
        return [_trace_spectra(t, layers, aggregation, variant) for t in traces]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda t: _trace_spectra(t, layers, aggregation, variant), traces)
        )


def _hfer_matrix(
    spectra: Sequence[dict[int, tuple[ModalPowers, float]]],
    layers: tuple[int, ...],
    cutoff: CutoffSpec,
) -> np.ndarray:
    """(n_traces, n_layers) window slice of per-layer high-frequency ratios."""
    return np.array(
        [[hfer(per_layer[w][0], cutoff) for w in layers] for per_layer in spectra]
    )


def _fiedler_matrix(
    spectra: Sequence[dict[int, tuple[ModalPowers, float]]],
    layers: tuple[int, ...],
) -> np.ndarray:
    return np.array([[per_layer[w][1] for w in layers] for per_layer in spectra])


def _cell_seed(seed: int, setting: str) -> int:
    # stable across runs and platforms; distinct per setting
    return seed * 1_000_003 + zlib.crc32(setting.encode("utf-8"))


def _build_cell(
    setting: str,
    layers: tuple[int, ...],
    sup_mat: np.ndarray,
    con_mat: np.ndarray,
    *,
    n_resamples: int,
    seed: int,
    fiedler_sup: np.ndarray | None = None,
    fiedler_con: np.ndarray | None = None,
) -> SweepCell:
    sup_scores = sup_mat.mean(axis=1)
    con_scores = con_mat.mean(axis=1)
    layer_contrast = con_mat.mean(axis=0) - sup_mat.mean(axis=0)
    ci = bootstrap_ci(
        con_scores - sup_scores,
        np.mean,
        n_resamples=n_resamples,
        seed=_cell_seed(seed, setting),
        vectorized=True,
    )
    fiedler_contrast = None
    fiedler_peak = None
    if fiedler_sup is not None and fiedler_con is not None:
        fiedler_contrast = fiedler_con.mean(axis=0) - fiedler_sup.mean(axis=0)
        fiedler_peak = layers[int(np.argmax(np.abs(fiedler_contrast)))]
    return SweepCell(
        setting=setting,
        scores_supported=sup_scores,
        scores_contradicted=con_scores,
        mean_supported=float(sup_scores.mean()),
        mean_contradicted=float(con_scores.mean()),
        contrast=float(con_scores.mean() - sup_scores.mean()),
        ci=ci,
        layers=layers,
        layer_contrast=layer_contrast,
        peak_layer=layers[int(np.argmax(np.abs(layer_contrast)))],
        fiedler_contrast=fiedler_contrast,
        fiedler_peak=fiedler_peak,
    )


def _safe_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r that degrades gracefully on short or constant vectors."""
    if a.shape[0] < 3 or b.shape[0] < 3 or a.shape != b.shape:
        return float("nan")
    try:
        return correlation(a, b)
    except DegenerateInputError:
        # a constant vector correlates with nothing -- unless the two are
        # the same constant vector, which is perfect agreement
        return 1.0 if np.allclose(a, b, rtol=0.0, atol=1e-15) else float("nan")


def _pair_agreement(a: SweepCell, b: SweepCell, with_fiedler: bool) -> PairAgreement:
    shared = tuple(w for w in a.layers if w in b.layers)
    ia = [a.layers.index(w) for w in shared]
    ib = [b.layers.index(w) for w in shared]
    corr = _safe_correlation(a.layer_contrast[ia], b.layer_contrast[ib])
    f_sign = f_peak = f_corr = None
    if with_fiedler and a.fiedler_contrast is not None and b.fiedler_contrast is not None:
        fa = float(a.fiedler_contrast.mean())
        fb = float(b.fiedler_contrast.mean())
        f_sign = bool(np.sign(fa) == np.sign(fb))
        f_peak = a.fiedler_peak == b.fiedler_peak
        f_corr = _safe_correlation(a.fiedler_contrast[ia], b.fiedler_contrast[ib])
    return PairAgreement(
        setting_a=a.setting,
        setting_b=b.setting,
        sign_match=bool(np.sign(a.contrast) == np.sign(b.contrast)),
        peak_match=a.peak_layer == b.peak_layer,
        contrast_correlation=corr,
        fiedler_sign_match=f_sign,
        fiedler_peak_match=f_peak,
        fiedler_correlation=f_corr,
    )


def _summarize_agreement(pairs: Sequence[PairAgreement]) -> AgreementSummary:
    if not pairs:
        return AgreementSummary(1.0, 1.0, 1.0, ())
    signs = [p.sign_match for p in pairs]
    peaks = [p.peak_match for p in pairs]
    corrs = [p.contrast_correlation for p in pairs]
    for p in pairs:
        if p.fiedler_sign_match is not None:
            signs.append(p.fiedler_sign_match)
            peaks.append(p.fiedler_peak_match)
            corrs.append(p.fiedler_correlation)
    finite = [c for c in corrs if np.isfinite(c)]
    return AgreementSummary(
        sign_agreement_rate=float(np.mean(signs)),
        peak_agreement_rate=float(np.mean(peaks)),
        mean_correlation=float(np.mean(finite)) if finite else float("nan"),
        pairs=tuple(pairs),
    )


def cutoff_sweep(
    traces: Sequence[ActivationTrace],
    c_grid: Sequence[float] = DEFAULT_C_GRID,
    *,
    config: DiagConfig = DEFAULT_CONFIG,
    baseline_c: float = 20.0,
    n_resamples: int = 2000,
    seed: int = 0,
    workers: int = 1,
) -> SweepReport:
    """Sweep the mass-mode cutoff percentage over one shared spectral pass.

    Every cell reuses the same per-(trace, layer) modal powers, so the
    sweep's baseline cell is bit-identical to running the diagnostics
    directly with the default config.  Each cell records its contrast
    deviation from the ``baseline_c`` cell.
    """
    if not c_grid:
        raise ConfigurationError("cutoff grid is empty")
    grid = [float(c) for c in c_grid]
    if baseline_c not in grid:
        raise ConfigurationError(
            f"cutoff grid {grid} must include the baseline c={baseline_c:g}"
        )
    supported, contradicted = _split_classes(traces)
    layers = config.window
    _check_layers(traces, layers)
    sup_spec = _dataset_spectra(
        supported, layers, config.aggregation, config.variant, workers
    )
    con_spec = _dataset_spectra(
        contradicted, layers, config.aggregation, config.variant, workers
    )

    cells = []
    for c in grid:
        cutoff = CutoffSpec.mass(c)
        cells.append(
            _build_cell(
                cutoff.describe(),
                layers,
                _hfer_matrix(sup_spec, layers, cutoff),
                _hfer_matrix(con_spec, layers, cutoff),
                n_resamples=n_resamples,
                seed=seed,
            )
        )

    baseline_setting = CutoffSpec.mass(baseline_c).describe()
    base = next(c for c in cells if c.setting == baseline_setting)
    finished = []
    for cell in cells:
        delta = abs(cell.contrast - base.contrast)
        if abs(base.contrast) >= RELATIVE_DEVIATION_FLOOR:
            delta /= abs(base.contrast)
        finished.append(replace(cell, deviation_from_baseline=delta))
    pairs = [
        _pair_agreement(base, c, with_fiedler=False)
        for c in finished
        if c.setting != baseline_setting
    ]
    return SweepReport(
        axis=SweepAxis.CUTOFF,
        cells=tuple(finished),
        baseline_setting=baseline_setting,
        agreement=_summarize_agreement(pairs),
    )


def _window_setting(window: tuple[int, ...]) -> str:
    if list(window) == list(range(window[0], window[-1] + 1)):
        return f"{window[0]}:{window[-1]}"
    return ",".join(str(w) for w in window)


def window_shift(
    traces: Sequence[ActivationTrace],
    windows: Sequence[Sequence[int]] = DEFAULT_WINDOW_GRID,
    *,
    config: DiagConfig = DEFAULT_CONFIG,
    n_resamples: int = 2000,
    seed: int = 0,
    workers: int = 1,
) -> SweepReport:
    """Shift the early-layer window and compare against the default one.

    All windows are sliced out of a single spectral pass over the union
    of their layers.  Agreement (contrast sign, peak layer) is measured
    for each window against the config's window, which must be in the
    grid.
    """
    if not windows:
        raise ConfigurationError("window grid is empty")
    grid = [tuple(int(w) for w in win) for win in windows]
    for win in grid:
        DiagConfig(window=win)  # reuse its validation
    if config.window not in grid:
        raise ConfigurationError(
            f"window grid must include the baseline window "
            f"{_window_setting(config.window)}"
        )
    supported, contradicted = _split_classes(traces)
    union = tuple(sorted({w for win in grid for w in win}))
    _check_layers(traces, union)
    sup_spec = _dataset_spectra(
        supported, union, config.aggregation, config.variant, workers
    )
    con_spec = _dataset_spectra(
        contradicted, union, config.aggregation, config.variant, workers
    )

    cells = []
    for win in grid:
        cells.append(
            _build_cell(
                _window_setting(win),
                win,
                _hfer_matrix(sup_spec, win, config.cutoff),
                _hfer_matrix(con_spec, win, config.cutoff),
                n_resamples=n_resamples,
                seed=seed,
            )
        )
    baseline_setting = _window_setting(config.window)
    base = next(c for c in cells if c.setting == baseline_setting)
    pairs = [
        _pair_agreement(base, c, with_fiedler=False)
        for c in cells
        if c.setting != baseline_setting
    ]
    return SweepReport(
        axis=SweepAxis.WINDOW,
        cells=tuple(cells),
        baseline_setting=baseline_setting,
        agreement=_summarize_agreement(pairs),
    )


VARIANT_GRID = (
    (LaplacianVariant.SYM, AggregationScheme.UNIFORM),
    (LaplacianVariant.SYM, AggregationScheme.MASS_WEIGHTED),
    (LaplacianVariant.RW, AggregationScheme.UNIFORM),
    (LaplacianVariant.RW, AggregationScheme.MASS_WEIGHTED),
)


def variant_compare(
    traces: Sequence[ActivationTrace],
    *,
    config: DiagConfig = DEFAULT_CONFIG,
    n_resamples: int = 2000,
    seed: int = 0,
    workers: int = 1,
) -> SweepReport:
    """Cross the Laplacian normalization with the head-aggregation scheme.

    Each of the four variants gets its own spectral pass (the graphs
    genuinely differ), then cells report both the high-frequency-ratio
    contrast and the per-layer Fiedler-value contrast, with pairwise
    agreement over all six variant pairs.
    """
    supported, contradicted = _split_classes(traces)
    layers = config.window
    _check_layers(traces, layers)

    cells = []
    for variant, agg in VARIANT_GRID:
        setting = f"{variant.value}:{agg.value}"
        sup_spec = _dataset_spectra(supported, layers, agg, variant, workers)
        con_spec = _dataset_spectra(contradicted, layers, agg, variant, workers)
        cells.append(
            _build_cell(
                setting,
                layers,
                _hfer_matrix(sup_spec, layers, config.cutoff),
                _hfer_matrix(con_spec, layers, config.cutoff),
                n_resamples=n_resamples,
                seed=seed,
                fiedler_sup=_fiedler_matrix(sup_spec, layers),
                fiedler_con=_fiedler_matrix(con_spec, layers),
            )
        )
    pairs = [
        _pair_agreement(cells[i], cells[j], with_fiedler=True)
        for i in range(len(cells))
        for j in range(i + 1, len(cells))
    ]
    return SweepReport(
        axis=SweepAxis.VARIANT,
        cells=tuple(cells),
        baseline_setting=f"{config.variant.value}:{config.aggregation.value}",
        agreement=_summarize_agreement(pairs),
    )


CSV_HEADER = (
    "axis",
    "setting",
    "class",
    "mean",
    "ci_lo",
    "ci_hi",
    "sign_agreement",
    "peak_layer",
)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def sweep_rows(report: SweepReport) -> list[tuple[str, ...]]:
    """Flatten a report into CSV rows: supported / contradicted / contrast
    per cell, in grid order.  CI, agreement, and peak layer ride on the
    contrast row; the baseline trivially agrees with itself."""
    agree_by_setting = {}
    if report.agreement is not None:
        for p in report.agreement.pairs:
            if p.setting_a == report.baseline_setting:
                agree_by_setting[p.setting_b] = p.sign_match
            elif p.setting_b == report.baseline_setting:
                agree_by_setting[p.setting_a] = p.sign_match
    rows = []
    for cell in report.cells:
        axis = report.axis.value
        rows.append((axis, cell.setting, "supported", _fmt(cell.mean_supported), "", "", "", ""))
        rows.append(
            (axis, cell.setting, "contradicted", _fmt(cell.mean_contradicted), "", "", "", "")
        )
        if cell.setting == report.baseline_setting:
            sign = "1"
        elif cell.setting in agree_by_setting:
            sign = "1" if agree_by_setting[cell.setting] else "0"
        else:
            sign = ""
        rows.append(
            (
                axis,
                cell.setting,
                "contrast",
                _fmt(cell.contrast),
                _fmt(cell.ci.lo),
                _fmt(cell.ci.hi),
                sign,
                str(cell.peak_layer),
            )
        )
    return rows


def write_sweep_csv(report: SweepReport, dest: str | Path | IO[str]) -> None:
    """Write a report as CSV.  Deterministic: fixed column order, fixed
    float formatting, LF line endings."""

    def _emit(fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(sweep_rows(report))

    if hasattr(dest, "write"):
        _emit(dest)  # type: ignore[arg-type]
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _emit(fh)
