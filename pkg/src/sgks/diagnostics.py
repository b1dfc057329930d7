"""Graph-Fourier diagnostics: modal powers, HFER, spectral entropy, Dirichlet
energy, and the per-layer / early-window drivers.

Definitions
-----------
Given an orthonormal Laplacian eigenbasis U with ascending eigenvalues, a
signal x has transform coefficients u_k . x and modal powers P_k = (u_k . x)^2
(for matrix signals, squared row norms of U^T X). The high-frequency energy
ratio (HFER) is the share of total power carried by the top of the spectrum,
where "top" is picked either by mode count (K = floor(kappa * T)) or by
eigenvalue mass (modes above the smallest index whose cumulative eigenvalue
mass reaches (1 - c/100) of the spectrum's total). Spectral entropy is the
Shannon entropy (nats) of the normalized power distribution.

Repeated eigenvalues make individual P_k basis-dependent, so both statistics
are computed over tie groups of (near-)equal eigenvalues: the cutoff snaps
down past ties and entropy pools powers within a group. For spectra with
distinct eigenvalues this reduces to the plain definitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateSignalError,
    SizeError,
    ValidationError,
    WindowError,
)
from .graphs import (
    AggregationScheme,
    Laplacian,
    LaplacianVariant,
    Spectrum,
    aggregate_heads,
    eig_spectrum,
    fiedler,
    normalized_laplacian,
)
from .traces import ActivationTrace

# eigenvalues on the [0, 2] normalized-Laplacian scale closer than this are
# treated as one degenerate group
EIGEN_TIE_TOL = 1e-9


class CutoffMode(str, Enum):
    COUNT = "count"
    MASS = "mass"


@dataclass(frozen=True)
class CutoffSpec:
    """How the high-frequency mode set is selected."""

    mode: CutoffMode = CutoffMode.MASS
    kappa: float = 0.2  # count mode: top floor(kappa*T) modes
    c_percent: float = 20.0  # mass mode: modes above the (1 - c/100) mass index

    def __post_init__(self):
        object.__setattr__(self, "mode", CutoffMode(self.mode))
        if self.mode == CutoffMode.COUNT and not (0 < self.kappa <= 1):
            raise ConfigurationError(f"kappa must be in (0, 1], got {self.kappa}")
        if self.mode == CutoffMode.MASS and not (0 < self.c_percent < 100):
            raise ConfigurationError(
                f"c_percent must be in (0, 100), got {self.c_percent}"
            )

    @classmethod
    def count(cls, kappa: float = 0.2) -> "CutoffSpec":
        return cls(mode=CutoffMode.COUNT, kappa=kappa)

    @classmethod
    def mass(cls, c_percent: float = 20.0) -> "CutoffSpec":
        return cls(mode=CutoffMode.MASS, c_percent=c_percent)

    def describe(self) -> str:
        if self.mode == CutoffMode.COUNT:
            return f"count:{self.kappa:g}"
        return f"mass:{self.c_percent:g}"


@dataclass(frozen=True, eq=False)
class ModalPowers:
    """Per-mode signal energies aligned with the spectrum they came from."""

    powers: np.ndarray
    normalized: np.ndarray
    total: float
    eigenvalues: np.ndarray

    def __post_init__(self):
        for name in ("powers", "normalized", "eigenvalues"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.powers.shape[0]

    @classmethod
    def from_powers(cls, powers, eigenvalues) -> "ModalPowers":
        powers = np.asarray(powers, dtype=np.float64)
        total = float(powers.sum())
        if total <= 0:
            raise DegenerateSignalError("total modal power must be positive")
        return cls(
            powers=powers,
            normalized=powers / total,
            total=total,
            eigenvalues=np.asarray(eigenvalues, dtype=np.float64),
        )


def gft(spectrum: Spectrum, signal: np.ndarray) -> ModalPowers:
    """Graph Fourier transform of a scalar (T,) or matrix (T, d) signal.

    Energy is preserved: sum of powers equals the squared Frobenius norm of
    the signal up to roundoff.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] != spectrum.T or x.ndim not in (1, 2):
        raise SizeError(
            f"signal shape {x.shape} does not match spectrum size {spectrum.T}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("signal has non-finite entries")
    coeffs = spectrum.eigenvectors.T @ x
    if coeffs.ndim == 1:
        powers = coeffs**2
    else:
        powers = (coeffs**2).sum(axis=1)
    total = float(powers.sum())
    if total <= 0.0:
        raise DegenerateSignalError("signal has zero total energy")
    return ModalPowers(
        powers=powers,
        normalized=powers / total,
        total=total,
        eigenvalues=spectrum.eigenvalues,
    )


def _tie_starts(eigenvalues: np.ndarray) -> np.ndarray:
    """Indices where a new tie group starts (position 0 always starts one)."""
    if eigenvalues.shape[0] == 0:
        return np.zeros(0, dtype=int)
    gaps = np.diff(eigenvalues)
    return np.concatenate(([0], np.where(gaps > EIGEN_TIE_TOL)[0] + 1))


def high_mode_count(eigenvalues: np.ndarray, cutoff: CutoffSpec) -> int:
    """Number of modes in the high-frequency set, tie-snapped.

    The raw boundary (from mode count or eigenvalue mass) is moved down until
    it sits on a tie-group edge, so a repeated eigenvalue is never split;
    boundary ties therefore enlarge the high set.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    T = lam.shape[0]
    if cutoff.mode == CutoffMode.COUNT:
        K = int(math.floor(cutoff.kappa * T))
        if K < 1:
            raise ConfigurationError(
                f"count cutoff kappa={cutoff.kappa} keeps no modes at T={T}; "
                "increase kappa or T"
            )
        low = T - K
    else:
        total = float(lam.sum())
        if total <= 0:
            raise ConfigurationError(
                "spectrum has no eigenvalue mass; mass cutoff undefined"
            )
        target = (1.0 - cutoff.c_percent / 100.0) * total
        cum = np.cumsum(lam)
        # smallest index whose cumulative mass reaches the target; the slack
        # keeps exact-arithmetic ties resolving toward the smaller index
        idx = int(np.searchsorted(cum, target - 1e-12 * total, side="left"))
        low = idx + 1
        if low >= T:
            raise ConfigurationError(
                f"mass cutoff c={cutoff.c_percent}% leaves no high-frequency "
                f"modes at T={T} (top eigenvalue exceeds the mass budget)"
            )
    while low > 0 and low < T and lam[low] - lam[low - 1] <= EIGEN_TIE_TOL:
        low -= 1
    if low == 0:
        raise ConfigurationError(
            "cutoff boundary fell inside a tie group spanning the whole "
            "spectrum; no meaningful high-frequency split exists"
        )
    return T - low


def hfer(powers: ModalPowers, cutoff: CutoffSpec = CutoffSpec()) -> float:
    """High-frequency energy ratio in [0, 1]."""
    K = high_mode_count(powers.eigenvalues, cutoff)
    share = float(powers.normalized[powers.T - K :].sum())
    # exact-summation noise can push a ratio of nonneg terms past the ends
    return min(1.0, max(0.0, share))


def spectral_entropy(powers: ModalPowers) -> float:
    """Shannon entropy (nats) of modal energy pooled over eigenvalue ties.

    Bounded by [0, ln T]; equals the entropy of the per-mode distribution
    whenever all eigenvalues are distinct.
    """
    starts = _tie_starts(powers.eigenvalues)
    masses = np.add.reduceat(powers.normalized, starts)
    masses = masses[masses > 0]
    se = float(-(masses * np.log(masses)).sum())
    return max(0.0, se)


def dirichlet_energy(laplacian: Laplacian, signal: np.ndarray) -> float:
    """Quadratic form x^T L x (trace form for matrix signals)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] != laplacian.matrix.shape[0]:
        raise SizeError(
            f"signal length {x.shape[0]} does not match Laplacian size "
            f"{laplacian.matrix.shape[0]}"
        )
    if x.ndim == 1:
        return float(x @ laplacian.matrix @ x)
    if x.ndim == 2:
        return float(np.sum((laplacian.matrix @ x) * x))
    raise SizeError(f"signal must be (T,) or (T, d), got shape {x.shape}")


@dataclass(frozen=True)
class BoundReport:
    """Diagnostic comparison of HFER against a spectral lower bound.

    rhs is (high-mode eigenvalue share) * (Dirichlet energy / signal energy).
    The inequality lhs >= rhs is not a theorem at this sharpness; violations
    are expected and the report exists to measure them, not to assert.
    """

    lhs: float
    rhs: float
    holds: bool
    high_mode_count: int


def hfer_bound_report(
    spectrum: Spectrum, signal: np.ndarray, cutoff: CutoffSpec = CutoffSpec()
) -> BoundReport:
    powers = gft(spectrum, signal)
    K = high_mode_count(powers.eigenvalues, cutoff)
    lam = powers.eigenvalues
    lam_total = float(lam.sum())
    if lam_total <= 0:
        raise ConfigurationError("spectrum has no eigenvalue mass")
    lam_share = float(lam[powers.T - K :].sum()) / lam_total
    rayleigh = float((lam * powers.normalized).sum())  # = x^T L x / ||x||^2
    lhs = hfer(powers, cutoff)
    rhs = lam_share * rayleigh
    holds = lhs >= rhs - 1e-12 * (1.0 + abs(rhs))
    return BoundReport(lhs=lhs, rhs=rhs, holds=holds, high_mode_count=K)


# ---------------------------------------------------------------------------
# per-layer pipeline


class SignalSource(str, Enum):
    SCALAR = "scalar"
    HIDDEN_MATRIX = "hidden"


DEFAULT_WINDOW = (2, 3, 4, 5)


@dataclass(frozen=True)
class DiagConfig:
    """Everything that parameterizes a diagnostics run."""

    window: tuple[int, ...] = DEFAULT_WINDOW
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    aggregation: AggregationScheme = AggregationScheme.MASS_WEIGHTED
    variant: LaplacianVariant = LaplacianVariant.SYM
    signal_source: SignalSource = SignalSource.SCALAR

    def __post_init__(self):
        window = tuple(int(w) for w in self.window)
        if not window:
            raise ConfigurationError("window must name at least one layer")
        if any(w < 0 for w in window):
            raise ConfigurationError(f"window has negative layer indices: {window}")
        if len(set(window)) != len(window) or list(window) != sorted(window):
            raise ConfigurationError(f"window must be sorted and unique: {window}")
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "aggregation", AggregationScheme(self.aggregation))
        object.__setattr__(self, "variant", LaplacianVariant(self.variant))
        object.__setattr__(self, "signal_source", SignalSource(self.signal_source))


DEFAULT_CONFIG = DiagConfig()


@dataclass(frozen=True)
class LayerDiagnostics:
    layer_index: int
    hfer: float
    se: float
    dirichlet: float
    fiedler: float
    energy_trace: float | None = None


@dataclass(frozen=True)
class EarlyWindowSummary:
    window: tuple[int, ...]
    hfer_mean: float
    se_mean: float
    per_layer: tuple[LayerDiagnostics, ...]


def _layer_signal(rec, source: SignalSource) -> np.ndarray:
    if source == SignalSource.SCALAR:
        return rec.signal.astype(np.float64)
    if rec.hidden is None:
        raise ValidationError(
            f"layer {rec.layer_index}: hidden-matrix signal requested but the "
            "trace has no hidden states"
        )
    return rec.hidden.astype(np.float64)


def layer_diagnostics(
    trace: ActivationTrace, config: DiagConfig = DEFAULT_CONFIG
) -> list[LayerDiagnostics]:
    """Full diagnostics for each layer in config.window, ascending."""
    missing = [w for w in config.window if w not in trace.layer_indices]
    if missing:
        raise WindowError(
            f"trace {trace.prompt_id!r} lacks window layers {missing} "
            f"(has {list(trace.layer_indices)})"
        )
    out = []
    for w in config.window:
        rec = trace.layer(w)
        affinity = aggregate_heads(rec, config.aggregation)
        lap = normalized_laplacian(affinity, config.variant)
        spectrum = eig_spectrum(lap)
        signal = _layer_signal(rec, config.signal_source)
        powers = gft(spectrum, signal)
        energy_trace = None
        if rec.hidden is not None:
            energy_trace = dirichlet_energy(lap, rec.hidden.astype(np.float64))
        out.append(
            LayerDiagnostics(
                layer_index=w,
                hfer=hfer(powers, config.cutoff),
                se=spectral_entropy(powers),
                dirichlet=dirichlet_energy(lap, signal),
                fiedler=fiedler(spectrum),
                energy_trace=energy_trace,
            )
        )
    return out


def early_window(
    diags: list[LayerDiagnostics], window: tuple[int, ...] | None = None
) -> EarlyWindowSummary:
    """Aggregate per-layer diagnostics over a layer window by plain means."""
    if window is None:
        window = tuple(d.layer_index for d in diags)
    by_index = {d.layer_index: d for d in diags}
    missing = [w for w in window if w not in by_index]
    if missing:
        raise WindowError(f"diagnostics lack window layers {missing}")
    picked = [by_index[w] for w in window]
    return EarlyWindowSummary(
        window=tuple(window),
        hfer_mean=float(np.mean([d.hfer for d in picked])),
        se_mean=float(np.mean([d.se for d in picked])),
        per_layer=tuple(picked),
    )


def hfer_score(trace: ActivationTrace, config: DiagConfig = DEFAULT_CONFIG) -> float:
    """The scalar the gate consumes: window-mean HFER."""
    return early_window(layer_diagnostics(trace, config), config.window).hfer_mean


def se_stability_probe(
    trace: ActivationTrace,
    config: DiagConfig = DEFAULT_CONFIG,
    m: int = 1,
    epsilon: float = 0.01,
    seed: int = 0,
) -> float:
    """Empirical sensitivity of window-mean spectral entropy to a sparse
    perturbation: m uniformly chosen tokens get a random bump with
    ||delta|| = epsilon * ||x||. Returns |SE_perturbed - SE_baseline|.
    """
    T = trace.T
    if not 0 <= m <= T:
        raise SizeError(f"m={m} outside [0, T={T}]")
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be non-negative, got {epsilon}")
    if m == 0 or epsilon == 0.0:
        return 0.0
    if config.signal_source != SignalSource.SCALAR:
        raise ConfigurationError("the stability probe perturbs scalar signals only")
    missing = [w for w in config.window if w not in trace.layer_indices]
    if missing:
        raise WindowError(f"trace lacks window layers {missing}")
    rng = np.random.default_rng(seed)
    base_vals = []
    pert_vals = []
    for w in config.window:
        rec = trace.layer(w)
        affinity = aggregate_heads(rec, config.aggregation)
        spectrum = eig_spectrum(normalized_laplacian(affinity, config.variant))
        x = rec.signal.astype(np.float64)
        idx = rng.choice(T, size=m, replace=False)
        direction = rng.standard_normal(m)
        norm = np.linalg.norm(direction)
        if norm == 0.0:  # pragma: no cover - measure-zero draw
            direction[0] = 1.0
            norm = 1.0
        delta = np.zeros(T)
        delta[idx] = direction / norm * (epsilon * np.linalg.norm(x))
        base_vals.append(spectral_entropy(gft(spectrum, x)))
        pert_vals.append(spectral_entropy(gft(spectrum, x + delta)))
    return abs(float(np.mean(pert_vals)) - float(np.mean(base_vals)))
