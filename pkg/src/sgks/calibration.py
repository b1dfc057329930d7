"""Threshold calibration for the three-zone rule.

Pipeline on a small labeled score set: ROC/AUC, a point threshold by
Youden's J, a symmetric quantile band around it, a one-dimensional logistic
probability map, and expected calibration error on a holdout — widening the
band one quantile step at a time until ECE clears its target.

Also houses ``mlr_threshold_check``, an empirical sanity check that a single
score threshold is essentially Bayes-optimal when the two class densities
have a monotone likelihood ratio (and detectably NOT when they don't).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .diagnostics import DEFAULT_CONFIG, DiagConfig, hfer_score
from .errors import (
    CalibrationError,
    ConfigurationError,
    NumericalError,
    SizeError,
    ValidationError,
)
from .gate import Thresholds

_LOGISTIC_B_CAP = 50.0
_GRAD_TOL = 1e-8
_MAX_NEWTON_ITER = 100


@dataclass(frozen=True)
class CalibrationSet:
    """Labeled verification scores for one model."""

    scores: np.ndarray
    labels: np.ndarray
    model_id: str = "uncalibrated"

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if scores.ndim != 1 or labels.ndim != 1:
            raise ValidationError("scores and labels must be 1-D")
        if scores.shape != labels.shape:
            raise SizeError(
                f"{scores.shape[0]} scores but {labels.shape[0]} labels"
            )
        if scores.size == 0:
            raise ValidationError("calibration set is empty")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be finite")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValidationError("labels must be 0 or 1")
        scores.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_pairs(cls, pairs, model_id: str = "uncalibrated") -> "CalibrationSet":
        pairs = list(pairs)
        scores = [h for h, _ in pairs]
        labels = [y for _, y in pairs]
        return cls(np.asarray(scores), np.asarray(labels), model_id)

    @classmethod
    def from_traces(cls, traces, config: DiagConfig = DEFAULT_CONFIG) -> "CalibrationSet":
        """Score labeled traces with the windowed HFER; unlabeled traces are
        rejected rather than silently dropped."""
        traces = list(traces)
        unlabeled = [t.prompt_id for t in traces if t.label is None]
        if unlabeled:
            raise ValidationError(
                f"traces without labels cannot calibrate: {', '.join(unlabeled)}"
            )
        if not traces:
            raise ValidationError("no traces given")
        model_ids = {t.model_id for t in traces}
        if len(model_ids) > 1:
            raise ValidationError(
                f"mixed model_ids in calibration traces: {sorted(model_ids)}"
            )
        scores = np.array([hfer_score(t, config) for t in traces])
        labels = np.array([t.label for t in traces])
        return cls(scores, labels, model_ids.pop())

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.labels == 0))

    @property
    def pairs(self) -> tuple:
        return tuple(zip(self.scores.tolist(), self.labels.tolist()))

    def __len__(self) -> int:
        return int(self.scores.size)


def stratified_split(
    cal_set: CalibrationSet, holdout_fraction: float = 0.5, seed: int = 0
) -> tuple[CalibrationSet, CalibrationSet]:
    """Deterministic per-class split into (train, holdout).

    Each class keeps at least one example on each side; a single-example
    class cannot be stratified and raises CalibrationError.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigurationError(
            f"holdout_fraction must be in (0, 1), got {holdout_fraction}"
        )
    rng = np.random.default_rng(seed)
    train_idx, hold_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(cal_set.labels == cls)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise CalibrationError(
                f"class {cls} has a single example; cannot stratify"
            )
        perm = rng.permutation(idx)
        n_hold = int(round(idx.size * holdout_fraction))
        n_hold = min(max(n_hold, 1), idx.size - 1)
        hold_idx.extend(perm[:n_hold])
        train_idx.extend(perm[n_hold:])
    train_idx = np.sort(np.asarray(train_idx, dtype=np.intp))
    hold_idx = np.sort(np.asarray(hold_idx, dtype=np.intp))
    make = lambda sel: CalibrationSet(
        cal_set.scores[sel], cal_set.labels[sel], cal_set.model_id
    )
    return make(train_idx), make(hold_idx)


# --------------------------------------------------------------------------
# ROC / AUC


@dataclass(frozen=True)
class RocCurve:
    """Operating points over every distinct score threshold (ascending),
    closed by a predict-nothing point at threshold +inf."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def __post_init__(self):
        for name in ("thresholds", "tpr", "fpr"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (self.thresholds.shape == self.tpr.shape == self.fpr.shape):
            raise ValidationError("curve arrays must share a shape")
        for rates in (self.tpr, self.fpr):
            if np.any(rates < 0) or np.any(rates > 1):
                raise ValidationError("TPR/FPR must lie in [0, 1]")
            if np.any(np.diff(rates) > 1e-15):
                raise ValidationError("rates must be non-increasing in threshold")
        if not 0.0 <= self.auc <= 1.0:
            raise ValidationError(f"AUC must lie in [0, 1], got {self.auc}")

    def trapezoid_area(self) -> float:
        """Area under the curve by trapezoids in (FPR, TPR) space."""
        # the staircase rises before it runs: same-FPR points must be
        # traversed in ascending TPR or vertical jumps shear the trapezoids
        order = np.lexsort((self.tpr, self.fpr))
        return float(np.trapezoid(self.tpr[order], self.fpr[order]))


def roc_auc(cal_set: CalibrationSet) -> RocCurve:
    """ROC curve and AUC with the convention that higher scores mean class 1.

    AUC comes from the Mann–Whitney rank formulation (ties credited 1/2),
    which equals the trapezoidal area under the enumerated curve.
    """
    pos = cal_set.scores[cal_set.labels == 1]
    neg = cal_set.scores[cal_set.labels == 0]
    if pos.size < 2 or neg.size < 2:
        raise CalibrationError(
            "ROC needs at least 2 examples per class, got "
            f"{pos.size} positive / {neg.size} negative"
        )
    ranks = rankdata(cal_set.scores, method="average")
    rank_sum = float(np.sum(ranks[cal_set.labels == 1]))
    u_stat = rank_sum - pos.size * (pos.size + 1) / 2.0
    auc = u_stat / (pos.size * neg.size)

    thresholds = np.unique(cal_set.scores)
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = 1.0 - np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    thresholds = np.append(thresholds, np.inf)  # predict-nothing endpoint
    tpr = np.append(tpr, 0.0)
    fpr = np.append(fpr, 0.0)
    curve = RocCurve(thresholds, tpr, fpr, auc)
    if abs(curve.trapezoid_area() - auc) > 1e-12:
        raise NumericalError(
            "rank AUC and trapezoid area disagree beyond 1e-12"
        )  # pragma: no cover - identical by construction
    return curve


def youden_threshold(curve: RocCurve, cal_set: CalibrationSet) -> float:
    """Threshold maximizing J = TPR - FPR.

    Ties: every threshold interval attaining the maximal J is a gap between
    consecutive distinct scores; take the midpoint of the widest such gap
    (widest-margin rule), lower gap on equal widths. A degenerate curve with
    max J = 0 falls back to the median score.
    """
    j_stat = curve.tpr - curve.fpr
    j_max = float(np.max(j_stat))
    if j_max <= 1e-15:
        return float(np.median(cal_set.scores))
    distinct = np.unique(cal_set.scores)
    best_width, best_mid = -1.0, None
    optimal = np.flatnonzero(j_stat >= j_max - 1e-12)
    for k in optimal:
        if not 1 <= k < distinct.size:
            continue  # extreme thresholds carry J = 0, unreachable here
        lo, hi = distinct[k - 1], distinct[k]
        width = hi - lo
        if width > best_width + 1e-15:
            best_width, best_mid = width, (lo + hi) / 2.0
    if best_mid is None:  # pragma: no cover - j_max > 0 guarantees a gap
        return float(np.median(cal_set.scores))
    return float(best_mid)


def quantile_band(
    cal_set: CalibrationSet, tau_hat: float, q: float = 0.15
) -> Thresholds:
    """Symmetric band tau_hat +- Q, with Q the linear-interpolation
    q-quantile of |h - tau_hat|, clamped to [0, 1]."""
    if not 0.0 < q < 1.0:
        raise ConfigurationError(f"band quantile must be in (0, 1), got {q}")
    deviations = np.abs(cal_set.scores - tau_hat)
    width = float(np.quantile(deviations, q))
    if width <= 0.0:
        width = 1e-6  # degenerate band still needs two distinct zones
    return Thresholds(
        tau_low=max(tau_hat - width, 0.0),
        tau_high=min(tau_hat + width, 1.0),
        model_id=cal_set.model_id,
    )


# --------------------------------------------------------------------------
# logistic probability map


@dataclass(frozen=True)
class LogisticFit:
    """Two-parameter fit p(y=1 | h) = sigmoid(a + b*h).

    nll_path records the accepted damped-Newton objective values (strictly
    non-increasing); on perfectly separated data the slope is capped at
    |b| = 50, the intercept refit with b held fixed, and ``separated`` set.
    """

    a: float
    b: float
    separated: bool
    n_iter: int
    nll_path: tuple[float, ...]

    def __iter__(self):
        return iter((self.a, self.b))

    def predict(self, scores) -> np.ndarray:
        return expit(self.a + self.b * np.asarray(scores, dtype=np.float64))


def _nll(theta: np.ndarray, design: np.ndarray, labels: np.ndarray) -> float:
    z = design @ theta
    return float(np.sum(np.logaddexp(0.0, z)) - labels @ z)


def fit_logistic(cal_set: CalibrationSet) -> LogisticFit:
    """Maximum-likelihood logistic fit by damped Newton iterations."""
    if cal_set.n_positive == 0 or cal_set.n_negative == 0:
        raise CalibrationError("logistic fit needs both classes present")
    h = cal_set.scores.astype(np.float64)
    y = cal_set.labels.astype(np.float64)
    design = np.column_stack([np.ones_like(h), h])
    theta = np.zeros(2)
    path = [_nll(theta, design, y)]
    separated = False
    iterations = 0
    for iterations in range(1, _MAX_NEWTON_ITER + 1):
        p = expit(design @ theta)
        grad = design.T @ (p - y)
        if float(np.max(np.abs(grad))) < _GRAD_TOL:
            iterations -= 1
            break
        weights = p * (1.0 - p)
        hess = design.T @ (design * weights[:, None]) + 1e-12 * np.eye(2)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError(f"singular Hessian in logistic fit: {exc}") from exc
        # backtrack until the objective actually decreases
        scale, candidate = 1.0, theta
        for _ in range(60):
            candidate = theta - scale * step
            if _nll(candidate, design, y) <= path[-1] + 1e-15:
                break
            scale *= 0.5
        else:
            break  # no productive step left; treat as converged
        theta = candidate
        path.append(_nll(theta, design, y))
        if abs(theta[1]) > _LOGISTIC_B_CAP:
            separated = True
            break
    a, b = float(theta[0]), float(theta[1])
    if separated:
        b = math.copysign(_LOGISTIC_B_CAP, b)
        # refit the intercept alone; 1-D Newton on a strictly convex slice
        for _ in range(_MAX_NEWTON_ITER):
            p = expit(a + b * h)
            grad_a = float(np.sum(p - y))
            if abs(grad_a) < _GRAD_TOL:
                break
            curvature = float(np.sum(p * (1.0 - p)))
            a -= grad_a / max(curvature, 1e-12)
    return LogisticFit(
        a=a, b=b, separated=separated, n_iter=iterations, nll_path=tuple(path)
    )


def ece(probs, labels, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width probability bins."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 1:
        raise SizeError(
            f"probs shape {probs.shape} does not match labels {labels.shape}"
        )
    if probs.size == 0:
        raise ValidationError("ece needs at least one prediction")
    if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
        raise ValidationError("probabilities must lie in [0, 1]")
    if n_bins < 1:
        raise ConfigurationError(f"n_bins must be positive, got {n_bins}")
    bins = np.minimum((probs * n_bins).astype(np.intp), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        count = int(np.sum(mask))
        if count == 0:
            continue
        gap = abs(float(np.mean(probs[mask])) - float(np.mean(labels[mask])))
        total += (count / probs.size) * gap
    return total


# --------------------------------------------------------------------------
# end-to-end protocol


@dataclass(frozen=True)
class CalibrationResult:
    """Everything the gate needs, plus fit provenance."""

    tau_hat: float
    band: Thresholds
    a: float
    b: float
    ece: float
    holdout_auc: float
    q_final: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def thresholds(self) -> Thresholds:
        return self.band

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "tau_low": self.band.tau_low,
            "tau_high": self.band.tau_high,
            "a": self.a,
            "b": self.b,
            "ece": self.ece,
            "auc": self.holdout_auc,
            "q_final": self.q_final,
            "flags": list(self.flags),
            "model_id": self.band.model_id,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationResult":
        try:
            band = Thresholds(
                tau_low=float(data["tau_low"]),
                tau_high=float(data["tau_high"]),
                model_id=str(data.get("model_id", "uncalibrated")),
            )
            return cls(
                tau_hat=float(data["tau_hat"]),
                band=band,
                a=float(data["a"]),
                b=float(data["b"]),
                ece=float(data["ece"]),
                holdout_auc=float(data["auc"]),
                q_final=float(data["q_final"]),
                flags=tuple(data.get("flags", ())),
            )
        except KeyError as exc:
            raise ValidationError(f"calibration result missing field {exc}") from exc

    @classmethod
    def loads(cls, text: str) -> "CalibrationResult":
        return cls.from_dict(json.loads(text))


def load_thresholds(path) -> Thresholds:
    """Read a Thresholds from a CalibrationResult JSON (or a bare band)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return Thresholds(
            tau_low=float(data["tau_low"]),
            tau_high=float(data["tau_high"]),
            model_id=str(data.get("model_id", "uncalibrated")),
        )
    except KeyError as exc:
        raise ValidationError(f"thresholds file missing field {exc}") from exc


def _decisive_ece(
    holdout: CalibrationSet, band: Thresholds, fit: LogisticFit
) -> float:
    """ECE restricted to the decisive zones; the uncertain band defers to
    oversight so its predictions are not scored."""
    decisive = (holdout.scores >= band.tau_high) | (holdout.scores <= band.tau_low)
    count = int(np.sum(decisive))
    if count < 4:
        raise CalibrationError(
            f"holdout has only {count} decisive predictions inside "
            f"({band.tau_low:.4f}, {band.tau_high:.4f}); need at least 4"
        )
    probs = fit.predict(holdout.scores[decisive])
    return ece(probs, holdout.labels[decisive])


def calibrate_full(
    train: CalibrationSet,
    holdout: CalibrationSet,
    q: float = 0.15,
    ece_target: float = 0.05,
) -> CalibrationResult:
    """Full protocol: ROC -> Youden threshold -> quantile band -> logistic
    fit -> decisive-zone ECE on the holdout, widening the band in 0.05
    quantile steps (up to q = 0.45) until ECE clears the target.

    Exhausting the widening loop sets a ``band_not_converged`` flag instead
    of raising; a holdout with fewer than 4 decisive predictions at any band
    raises CalibrationError.
    """
    if train.model_id != holdout.model_id:
        raise CalibrationError(
            f"train calibrated for {train.model_id!r} but holdout for "
            f"{holdout.model_id!r}"
        )
    if not 0.0 < ece_target < 1.0:
        raise ConfigurationError(f"ece_target must be in (0, 1), got {ece_target}")
    curve = roc_auc(train)
    tau_hat = youden_threshold(curve, train)
    fit = fit_logistic(train)
    flags: list[str] = ["separated"] if fit.separated else []

    q_grid = [q]
    while q_grid[-1] + 0.05 <= 0.45 + 1e-9:
        q_grid.append(q_grid[-1] + 0.05)
    band = quantile_band(train, tau_hat, q_grid[0])
    ece_value = _decisive_ece(holdout, band, fit)
    q_final = q_grid[0]
    for q_step in q_grid[1:]:
        if ece_value < ece_target:
            break
        band = quantile_band(train, tau_hat, q_step)
        ece_value = _decisive_ece(holdout, band, fit)
        q_final = q_step
    if ece_value >= ece_target:
        flags.append("band_not_converged")

    return CalibrationResult(
        tau_hat=tau_hat,
        band=band,
        a=fit.a,
        b=fit.b,
        ece=ece_value,
        holdout_auc=roc_auc(holdout).auc,
        q_final=q_final,
        flags=tuple(flags),
    )


# --------------------------------------------------------------------------
# single-threshold optimality check


@dataclass(frozen=True)
class MlrCheckResult:
    """Single-threshold vs best-3-piece risk comparison on held-out halves."""

    passed: bool
    single_risk: float
    three_piece_risk: float
    threshold: float  # best single threshold found on the selection half
    tolerance: float

    def __bool__(self) -> bool:
        return self.passed


def _interval_masses(sorted_x: np.ndarray, t1: float, t2: float) -> np.ndarray:
    """P(x < t1), P(t1 <= x < t2), P(x >= t2) from a sorted sample."""
    n = sorted_x.size
    c1 = np.searchsorted(sorted_x, t1, side="left") / n
    c2 = np.searchsorted(sorted_x, t2, side="left") / n
    return np.array([c1, c2 - c1, 1.0 - c2])


def mlr_threshold_check(
    f0_sampler,
    f1_sampler,
    n: int = 10_000,
    *,
    seed: int = 0,
    grid_size: int = 101,
    tolerance: float = 1e-2,
) -> MlrCheckResult:
    """Empirically verify single-threshold optimality for a density pair.

    Samplers are callables ``sampler(rng, size) -> array``. Each arm draws n
    points, split half for rule selection and half for honest risk
    evaluation (equal class priors). The best single-threshold rule (either
    orientation) is selected on a pooled-quantile grid, as is the best
    two-threshold three-piece rule with freely chosen piece labels; the
    check passes when the single threshold's held-out risk is within
    ``tolerance`` of the three-piece rule's. For class densities with a
    monotone likelihood ratio the gap is ~0; a bimodal alternative
    surrounding the null makes the three-piece rule strictly better and the
    check fails, which is the intended negative control.
    """
    if n < 100:
        raise ConfigurationError(f"need n >= 100 samples per arm, got {n}")
    if grid_size < 3:
        raise ConfigurationError(f"grid_size must be >= 3, got {grid_size}")
    rng = np.random.default_rng(seed)
    x0 = np.asarray(f0_sampler(rng, n), dtype=np.float64)
    x1 = np.asarray(f1_sampler(rng, n), dtype=np.float64)
    if x0.shape != (n,) or x1.shape != (n,):
        raise ValidationError("samplers must return 1-D arrays of length n")

    half = n // 2
    sel0, ev0 = np.sort(x0[:half]), np.sort(x0[half:])
    sel1, ev1 = np.sort(x1[:half]), np.sort(x1[half:])
    grid = np.unique(
        np.quantile(np.concatenate([sel0, sel1]), np.linspace(0.0, 1.0, grid_size))
    )

    def select(masses0: np.ndarray, masses1: np.ndarray):
        # labeling an interval 1 costs its f0 mass, labeling it 0 its f1
        # mass (equal priors); pick per-interval minima and remember them
        labels = masses0 < masses1
        return 0.5 * float(np.sum(np.where(labels, masses0, masses1))), labels

    def apply(masses0: np.ndarray, masses1: np.ndarray, labels: np.ndarray) -> float:
        return 0.5 * float(np.sum(np.where(labels, masses0, masses1)))

    # selection: best single threshold (t1 == t2 collapses the middle piece)
    best_single, best_t, single_labels = math.inf, float(grid[0]), None
    for t in grid:
        r, labels = select(_interval_masses(sel0, t, t), _interval_masses(sel1, t, t))
        if r < best_single:
            best_single, best_t, single_labels = r, float(t), labels
    # selection: best three-piece rule over ordered threshold pairs
    best_three, best_pair, three_labels = best_single, (best_t, best_t), single_labels
    for i, t1 in enumerate(grid):
        for t2 in grid[i:]:
            r, labels = select(
                _interval_masses(sel0, t1, t2), _interval_masses(sel1, t1, t2)
            )
            if r < best_three:
                best_three, best_pair, three_labels = r, (float(t1), float(t2)), labels

    # honest risks: the rules (thresholds AND labels) were frozen on the
    # selection half, so the evaluation half only measures them
    single_risk = apply(
        _interval_masses(ev0, best_t, best_t),
        _interval_masses(ev1, best_t, best_t),
        single_labels,
    )
    three_risk = apply(
        _interval_masses(ev0, *best_pair),
        _interval_masses(ev1, *best_pair),
        three_labels,
    )
    return MlrCheckResult(
        passed=single_risk <= three_risk + tolerance,
        single_risk=single_risk,
        three_piece_risk=three_risk,
        threshold=best_t,
        tolerance=tolerance,
    )
