"""Token graphs from attention: head aggregation, Laplacians, spectra.

The per-layer attention stack is collapsed into a single symmetric affinity
over tokens, from which we take a normalized graph Laplacian and its
eigendecomposition. All math here runs in float64 regardless of the float32
trace storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, NumericalError, ValidationError
from .traces import LayerRecord

# weight granted to isolated tokens so degree normalization stays defined
SELF_LOOP_WEIGHT = 1e-8

SYMMETRY_TOL = 1e-10


class AggregationScheme(str, Enum):
    UNIFORM = "uniform"
    MASS_WEIGHTED = "mass"


class LaplacianVariant(str, Enum):
    SYM = "sym"
    RW = "rw"


@dataclass(frozen=True, eq=False)
class Affinity:
    """Symmetric non-negative token-token weights plus how they were built."""

    matrix: np.ndarray
    aggregation: AggregationScheme
    head_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.array(self.matrix, dtype=np.float64))
        self.matrix.flags.writeable = False


@dataclass(frozen=True, eq=False)
class Laplacian:
    matrix: np.ndarray
    variant: LaplacianVariant
    degrees: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.array(self.matrix, dtype=np.float64))
        object.__setattr__(self, "degrees", np.array(self.degrees, dtype=np.float64))
        self.matrix.flags.writeable = False
        self.degrees.flags.writeable = False


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with an orthonormal eigenvector basis."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column k pairs with eigenvalues[k]
    variant: LaplacianVariant = LaplacianVariant.SYM

    def __post_init__(self):
        object.__setattr__(
            self, "eigenvalues", np.array(self.eigenvalues, dtype=np.float64)
        )
        object.__setattr__(
            self, "eigenvectors", np.array(self.eigenvectors, dtype=np.float64)
        )
        self.eigenvalues.flags.writeable = False
        self.eigenvectors.flags.writeable = False

    @property
    def T(self) -> int:
        return self.eigenvalues.shape[0]


def head_weights(attention: np.ndarray, scheme: AggregationScheme) -> np.ndarray:
    """Per-head convex weights. Uniform is 1/H; mass weighting is each head's
    total attention mass over the grand total (these coincide on fully
    row-stochastic heads, where every head carries mass T)."""
    H = attention.shape[2]
    if scheme == AggregationScheme.UNIFORM:
        return np.full(H, 1.0 / H)
    masses = attention.astype(np.float64).sum(axis=(0, 1))
    total = masses.sum()
    if total <= 0:
        raise DegenerateInputError("all heads carry zero attention mass")
    return masses / total


def aggregate_heads(
    layer: LayerRecord | np.ndarray,
    scheme: AggregationScheme = AggregationScheme.MASS_WEIGHTED,
) -> Affinity:
    """Collapse (T, T, H) attention into a symmetric affinity.

    The head mixture M = sum_h alpha_h A_h is symmetrized as (M + M^T) / 2,
    which is exact in floating point because elementwise addition commutes.
    Raw arrays are accepted (e.g., padded heads with zero rows); LayerRecord
    inputs have already passed row-stochastic validation.
    """
    att = layer.attention if isinstance(layer, LayerRecord) else np.asarray(layer)
    if att.ndim != 3 or att.shape[0] != att.shape[1]:
        raise ValidationError(f"attention must be (T, T, H), got {att.shape}")
    if not np.isfinite(att).all():
        raise ValidationError("attention has non-finite entries")
    if (att < 0).any():
        raise ValidationError("attention has negative entries")
    att64 = att.astype(np.float64)
    if att64.sum() <= 0:
        raise DegenerateInputError("attention tensor is identically zero")
    scheme = AggregationScheme(scheme)
    alpha = head_weights(att64, scheme)
    mixed = np.tensordot(att64, alpha, axes=([2], [0]))
    sym = 0.5 * (mixed + mixed.T)
    return Affinity(matrix=sym, aggregation=scheme, head_weights=alpha)


def normalized_laplacian(
    affinity: Affinity | np.ndarray,
    variant: LaplacianVariant = LaplacianVariant.SYM,
) -> Laplacian:
    """Degree-normalized Laplacian of a symmetric affinity.

    sym: I - D^(-1/2) W D^(-1/2), exactly symmetric by construction.
    rw:  I - D^(-1) W.
    Zero-degree tokens receive a self loop of SELF_LOOP_WEIGHT first, so the
    normalization never divides by zero.
    """
    W = affinity.matrix if isinstance(affinity, Affinity) else np.asarray(affinity, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError(f"affinity must be square, got {W.shape}")
    if not np.isfinite(W).all():
        raise ValidationError("affinity has non-finite entries")
    if (W < 0).any():
        raise ValidationError("affinity has negative entries")
    if np.abs(W - W.T).max() > SYMMETRY_TOL:
        raise ValidationError("affinity is not symmetric within tolerance")
    variant = LaplacianVariant(variant)
    W = np.array(W, dtype=np.float64)  # private copy; may add self loops
    deg = W.sum(axis=1)
    isolated = deg == 0
    if isolated.any():
        idx = np.where(isolated)[0]
        W[idx, idx] = SELF_LOOP_WEIGHT
        deg = W.sum(axis=1)
    n = W.shape[0]
    if variant == LaplacianVariant.SYM:
        inv_sqrt = 1.0 / np.sqrt(deg)
        # form the (bitwise symmetric) scale matrix s_i * s_j first, so the
        # single multiply by symmetric W keeps L exactly symmetric
        scale = inv_sqrt[:, None] * inv_sqrt[None, :]
        L = np.eye(n) - W * scale
    else:
        L = np.eye(n) - W / deg[:, None]
    return Laplacian(matrix=L, variant=variant, degrees=deg)


def eig_spectrum(laplacian: Laplacian) -> Spectrum:
    """Eigendecomposition with ascending eigenvalues.

    The rw variant is handled through the similarity transform
    D^(1/2) L_rw D^(-1/2), which is the sym matrix up to rounding; its
    spectrum is identical and the returned basis stays orthonormal.
    """
    L = laplacian.matrix
    if laplacian.variant == LaplacianVariant.RW:
        s = np.sqrt(laplacian.degrees)
        M = L * (s[:, None] / s[None, :])
        M = 0.5 * (M + M.T)  # kill the ~1e-16 rounding skew
    else:
        if np.abs(L - L.T).max() > SYMMETRY_TOL:
            raise ValidationError("sym Laplacian lost symmetry beyond tolerance")
        M = L
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from None
    if not np.isfinite(eigenvalues).all():
        raise NumericalError("eigensolver returned non-finite eigenvalues")
    return Spectrum(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        variant=laplacian.variant,
    )


def fiedler(spectrum: Spectrum) -> float:
    """Second-smallest eigenvalue (algebraic connectivity)."""
    if spectrum.T < 2:
        raise ValidationError("need at least two tokens for a Fiedler value")
    return float(spectrum.eigenvalues[1])
