"""Spectral graph kill switch: training-free verification diagnostics.

The package turns attention maps into token graphs, reads graph-signal
diagnostics off their Laplacian spectra (high-frequency energy ratio,
spectral entropy, Dirichlet energy, Fiedler value), and drives a calibrated
three-zone support verdict plus an abstain-capable retrieval gate from the
high-frequency energy ratio.

Layering (each module only imports from those above it):

    errors
    traces        binary .sgkt trace format + validation
    graphs        head aggregation, normalized Laplacians, spectra
    diagnostics   GFT energies, HFER, entropy, Dirichlet, windows
    synth         synthetic trace generator with dialed-in spectra
    gate          three-zone verdicts, kill switch, episodes, audit log
    calibration   threshold fitting, logistic map, ECE, band checks
    stats         bootstrap/permutation/FDR and covariate helpers
    sweeps        robustness sweeps over cutoff/window/variant
    bench         latency measurement
    cli           command-line front end
"""

from .errors import (
    CalibrationError,
    ConfigurationError,
    DegenerateInputError,
    DegenerateSignalError,
    EpisodeError,
    FormatError,
    NumericalError,
    SgksError,
    SizeError,
    TruncationError,
    UsageError,
    ValidationError,
    WindowError,
)
from .traces import (
    ActivationTrace,
    LayerRecord,
    load_traces,
    read_dataset,
    read_trace,
    trace_equals,
    validate_trace,
    write_dataset,
    write_trace,
)
from .graphs import (
    AggregationScheme,
    Affinity,
    Laplacian,
    LaplacianVariant,
    Spectrum,
    aggregate_heads,
    eig_spectrum,
    fiedler,
    head_weights,
    normalized_laplacian,
)
from .diagnostics import (
    BoundReport,
    CutoffMode,
    CutoffSpec,
    DiagConfig,
    EarlyWindowSummary,
    LayerDiagnostics,
    ModalPowers,
    SignalSource,
    dirichlet_energy,
    early_window,
    gft,
    hfer,
    hfer_bound_report,
    hfer_score,
    high_mode_count,
    layer_diagnostics,
    se_stability_probe,
    spectral_entropy,
)
from .synth import Regime, SynthConfig, synth_dataset, synth_trace
from .gate import (
    AuditLog,
    CandidatePrompt,
    ChainPolicy,
    ChainResult,
    EpisodeResult,
    GateAction,
    GateOutcome,
    RetrievedContext,
    Retriever,
    StoredTraceVerifier,
    SupportVerdict,
    Thresholds,
    Verdict,
    VerifierModel,
    WIDE_MARGIN_THRESHOLDS,
    classify,
    gate_step,
    render_prompt,
    replay_audit,
    run_chain,
    run_episode,
)
from .calibration import (
    CalibrationResult,
    CalibrationSet,
    LogisticFit,
    MlrCheckResult,
    RocCurve,
    calibrate_full,
    ece,
    fit_logistic,
    load_thresholds,
    mlr_threshold_check,
    quantile_band,
    roc_auc,
    stratified_split,
    youden_threshold,
)
from .stats import (
    ConfidenceInterval,
    FragmentationCovariates,
    PermutationResult,
    bh_fdr,
    bootstrap_ci,
    correlation,
    fragmentation_covariates,
    paired_permutation,
)
from .sweeps import (
    AgreementSummary,
    PairAgreement,
    SweepAxis,
    SweepCell,
    SweepReport,
    cutoff_sweep,
    sweep_rows,
    variant_compare,
    window_shift,
    write_sweep_csv,
)
from .bench import BenchRow, bench_latency

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
