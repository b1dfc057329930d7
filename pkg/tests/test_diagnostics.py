"""Spectral diagnostics: GFT energies, cutoffs, entropy, Dirichlet, windows.

The cutoff and entropy tests pin exact hand-derived values on tiny
spectra; Parseval and the Dirichlet identity run as randomized properties
over real attention-induced graphs.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rand_attention
from sgks.diagnostics import (
    DEFAULT_CONFIG,
    DEFAULT_WINDOW,
    EIGEN_TIE_TOL,
    CutoffSpec,
    DiagConfig,
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
from sgks.errors import (
    ConfigurationError,
    DegenerateSignalError,
    SizeError,
    ValidationError,
    WindowError,
)
from sgks.graphs import aggregate_heads, eig_spectrum, normalized_laplacian
from sgks.traces import ActivationTrace, LayerRecord


def random_spectrum(T=12, H=3, seed=0):
    rng = np.random.default_rng(seed)
    lap = normalized_laplacian(aggregate_heads(rand_attention(rng, T, H)))
    return eig_spectrum(lap), lap, rng


def powers_from(eigenvalues, powers):
    return ModalPowers.from_powers(np.asarray(powers, float), eigenvalues)


class TestCutoffSpec:
    def test_describe(self):
        assert CutoffSpec.mass(20).describe() == "mass:20"
        assert CutoffSpec.count(0.2).describe() == "count:0.2"

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            CutoffSpec.count(0.0)
        with pytest.raises(ConfigurationError):
            CutoffSpec.count(1.5)
        with pytest.raises(ConfigurationError):
            CutoffSpec.mass(0.0)
        with pytest.raises(ConfigurationError):
            CutoffSpec.mass(100.0)


class TestHighModeCount:
    LAM = np.array([0.0, 0.5, 1.0, 1.5])

    def test_count_mode_floor(self):
        assert high_mode_count(self.LAM, CutoffSpec.count(0.5)) == 2
        assert high_mode_count(self.LAM, CutoffSpec.count(0.25)) == 1
        # floor(0.74 * 4) = 2
        assert high_mode_count(self.LAM, CutoffSpec.count(0.74)) == 2

    def test_count_mode_keeps_no_modes(self):
        with pytest.raises(ConfigurationError, match="keeps no modes"):
            high_mode_count(self.LAM, CutoffSpec.count(0.2))  # floor(0.8) = 0

    def test_mass_mode_hand_example(self):
        # total 3.0, c=60 -> low-mass target 1.2; cum [0, .5, 1.5, 3] reaches
        # it at index 2, so the high set is the single top mode
        assert high_mode_count(self.LAM, CutoffSpec.mass(60)) == 1

    def test_mass_mode_top_mode_exceeds_budget(self):
        # top eigenvalue holds 50% of mass; a 20% budget cannot be met
        with pytest.raises(ConfigurationError, match="leaves no high"):
            high_mode_count(self.LAM, CutoffSpec.mass(20))

    def test_tie_snapping_enlarges_high_set(self):
        lam = np.array([0.0, 1.0, 1.0 + 1e-12, 2.0])
        # raw K=2 would split the tie pair; snapping moves the boundary down
        assert high_mode_count(lam, CutoffSpec.count(0.5)) == 3
        # a boundary on a real gap is untouched
        assert high_mode_count(lam, CutoffSpec.count(0.25)) == 1

    def test_whole_spectrum_tie_rejected(self):
        lam = np.array([1.0, 1.0, 1.0 + 1e-13])
        with pytest.raises(ConfigurationError, match="tie group"):
            high_mode_count(lam, CutoffSpec.count(0.4))


class TestHfer:
    def test_count_mode_exact_fraction(self):
        p = powers_from([0.0, 0.5, 1.0, 1.5], [4.0, 3.0, 2.0, 1.0])
        assert hfer(p, CutoffSpec.count(0.5)) == pytest.approx(0.3, abs=1e-15)

    def test_mass_mode_exact_fraction(self):
        p = powers_from([0.0, 0.5, 1.0, 1.5], [4.0, 3.0, 2.0, 1.0])
        assert hfer(p, CutoffSpec.mass(60)) == pytest.approx(0.1, abs=1e-15)

    def test_range_and_scale_invariance(self):
        spectrum, _, rng = random_spectrum(seed=1)
        x = rng.standard_normal(spectrum.T)
        base = hfer(gft(spectrum, x))
        assert 0.0 <= base <= 1.0
        for c in (1e-6, 1e-3, 10.0, 1e6):
            assert hfer(gft(spectrum, c * x)) == pytest.approx(base, abs=1e-12)

    def test_concentrated_signals(self):
        spectrum, _, _ = random_spectrum(seed=2)
        lowest = spectrum.eigenvectors[:, 0]
        highest = spectrum.eigenvectors[:, -1]
        assert hfer(gft(spectrum, lowest)) == pytest.approx(0.0, abs=1e-12)
        assert hfer(gft(spectrum, highest)) == pytest.approx(1.0, abs=1e-12)


class TestGft:
    def test_parseval_scalar(self):
        spectrum, _, rng = random_spectrum(seed=3)
        x = rng.standard_normal(spectrum.T)
        p = gft(spectrum, x)
        assert p.total == pytest.approx(float(x @ x), rel=1e-12)
        assert p.normalized.sum() == pytest.approx(1.0, abs=1e-12)

    def test_parseval_matrix(self):
        spectrum, _, rng = random_spectrum(seed=4)
        X = rng.standard_normal((spectrum.T, 5))
        p = gft(spectrum, X)
        assert p.total == pytest.approx(float((X**2).sum()), rel=1e-12)

    def test_zero_signal(self):
        spectrum, _, _ = random_spectrum(seed=5)
        with pytest.raises(DegenerateSignalError):
            gft(spectrum, np.zeros(spectrum.T))

    def test_shape_mismatch(self):
        spectrum, _, _ = random_spectrum(seed=6)
        with pytest.raises(SizeError):
            gft(spectrum, np.ones(spectrum.T + 1))

    def test_nonfinite_signal(self):
        spectrum, _, _ = random_spectrum(seed=7)
        x = np.ones(spectrum.T)
        x[0] = np.inf
        with pytest.raises(ValidationError):
            gft(spectrum, x)

    @settings(max_examples=30, deadline=None)
    @given(T=st.integers(3, 20), seed=st.integers(0, 10**6))
    def test_parseval_property(self, T, seed):
        rng = np.random.default_rng(seed)
        spectrum = eig_spectrum(
            normalized_laplacian(aggregate_heads(rand_attention(rng, T, 2)))
        )
        x = rng.standard_normal(T) + 0.1
        p = gft(spectrum, x)
        assert abs(p.total - float(x @ x)) <= 1e-8 * (1 + float(x @ x))


class TestSpectralEntropy:
    def test_uniform_over_distinct_modes(self):
        p = powers_from([0.0, 0.5, 1.0, 1.5], [1.0, 1.0, 1.0, 1.0])
        assert spectral_entropy(p) == pytest.approx(math.log(4), abs=1e-12)

    def test_concentrated_mass_gives_zero(self):
        p = powers_from([0.0, 0.5, 1.0], [0.0, 0.0, 5.0])
        assert spectral_entropy(p) == pytest.approx(0.0, abs=1e-15)

    def test_tie_groups_pool_before_entropy(self):
        # eigenvalues {0, (1,1), 2}: uniform per-mode powers pool to
        # masses (1/4, 1/2, 1/4) -> entropy 1.5 ln 2, not ln 4
        p = powers_from([0.0, 1.0, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0])
        assert spectral_entropy(p) == pytest.approx(1.5 * math.log(2), abs=1e-12)

    def test_bounds_property(self):
        spectrum, _, rng = random_spectrum(T=16, seed=8)
        for _ in range(10):
            x = rng.standard_normal(16)
            se = spectral_entropy(gft(spectrum, x))
            assert 0.0 <= se <= math.log(16) + 1e-12


class TestDirichlet:
    def test_identity_with_modal_powers(self):
        spectrum, lap, rng = random_spectrum(seed=9)
        x = rng.standard_normal(spectrum.T)
        p = gft(spectrum, x)
        direct = dirichlet_energy(lap, x)
        via_modes = float((p.eigenvalues * p.powers).sum())
        assert direct == pytest.approx(via_modes, rel=1e-10)

    def test_matrix_signal_trace_form(self):
        spectrum, lap, rng = random_spectrum(seed=10)
        X = rng.standard_normal((spectrum.T, 3))
        per_column = sum(dirichlet_energy(lap, X[:, j]) for j in range(3))
        assert dirichlet_energy(lap, X) == pytest.approx(per_column, rel=1e-12)

    def test_constant_vector_on_rw_is_zero(self):
        # L_rw rows sum to zero, so constants are in its kernel
        from sgks.graphs import LaplacianVariant

        rng = np.random.default_rng(11)
        lap = normalized_laplacian(
            aggregate_heads(rand_attention(rng, 10, 2)), LaplacianVariant.RW
        )
        assert dirichlet_energy(lap, np.ones(10)) == pytest.approx(0.0, abs=1e-12)

    def test_size_mismatch(self):
        _, lap, _ = random_spectrum(seed=12)
        with pytest.raises(SizeError):
            dirichlet_energy(lap, np.ones(99))


class TestBoundReport:
    def test_fields_and_tautology_case(self):
        spectrum, _, rng = random_spectrum(seed=13)
        # signal concentrated on the top mode: lhs = 1 >= rhs always
        x = spectrum.eigenvectors[:, -1]
        report = hfer_bound_report(spectrum, x)
        assert report.lhs == pytest.approx(1.0, abs=1e-12)
        assert report.holds
        assert 1 <= report.high_mode_count < spectrum.T

    def test_reports_violations_without_raising(self):
        # smooth signal: lhs ~ 0 while rhs > 0 -> bound fails, but only the
        # flag reports it
        spectrum, _, _ = random_spectrum(seed=14)
        x = spectrum.eigenvectors[:, 1] + 1e-3
        report = hfer_bound_report(spectrum, x)
        assert isinstance(report.holds, bool)


def build_trace(n_layers=6, T=10, H=2, hidden_d=None, seed=0, label=None):
    rng = np.random.default_rng(seed)
    layers = []
    for w in range(n_layers):
        hidden = (
            rng.standard_normal((T, hidden_d)).astype(np.float32)
            if hidden_d
            else None
        )
        layers.append(
            LayerRecord(
                layer_index=w,
                attention=rand_attention(rng, T, H),
                signal=rng.standard_normal(T).astype(np.float32),
                hidden=hidden,
            )
        )
    return ActivationTrace("m", f"trace-{seed}", tuple(layers), label=label)


class TestLayerPipeline:
    def test_default_window_layers(self):
        diags = layer_diagnostics(build_trace())
        assert [d.layer_index for d in diags] == list(DEFAULT_WINDOW)
        for d in diags:
            assert 0.0 <= d.hfer <= 1.0
            assert d.se >= 0.0
            assert d.dirichlet >= -1e-12
            assert d.energy_trace is None

    def test_missing_window_layer(self):
        short = build_trace(n_layers=3)
        with pytest.raises(WindowError, match="trace-0"):
            layer_diagnostics(short)

    def test_energy_trace_present_with_hidden(self):
        diags = layer_diagnostics(build_trace(hidden_d=4))
        assert all(d.energy_trace is not None and d.energy_trace >= 0 for d in diags)

    def test_hidden_signal_source_requires_hidden(self):
        config = DiagConfig(signal_source=SignalSource.HIDDEN_MATRIX)
        with pytest.raises(ValidationError, match="hidden"):
            layer_diagnostics(build_trace(), config)
        diags = layer_diagnostics(build_trace(hidden_d=4), config)
        assert len(diags) == len(DEFAULT_WINDOW)

    def test_hfer_score_is_window_mean(self):
        trace = build_trace()
        diags = layer_diagnostics(trace)
        assert hfer_score(trace) == pytest.approx(
            float(np.mean([d.hfer for d in diags])), abs=1e-15
        )

    def test_early_window_subset_and_missing(self):
        diags = layer_diagnostics(build_trace())
        sub = early_window(diags, (2, 3))
        assert sub.window == (2, 3)
        assert sub.hfer_mean == pytest.approx(
            (diags[0].hfer + diags[1].hfer) / 2, abs=1e-15
        )
        with pytest.raises(WindowError):
            early_window(diags, (2, 9))

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            DiagConfig(window=())
        with pytest.raises(ConfigurationError):
            DiagConfig(window=(3, 1))
        with pytest.raises(ConfigurationError):
            DiagConfig(window=(-1, 2))


class TestStabilityProbe:
    def test_zero_perturbation_is_zero(self):
        trace = build_trace()
        assert se_stability_probe(trace, m=0) == 0.0
        assert se_stability_probe(trace, epsilon=0.0) == 0.0

    def test_deterministic_and_small(self):
        trace = build_trace()
        a = se_stability_probe(trace, m=1, epsilon=0.01, seed=7)
        b = se_stability_probe(trace, m=1, epsilon=0.01, seed=7)
        assert a == b
        assert a >= 0.0

    def test_m_out_of_range(self):
        with pytest.raises(SizeError):
            se_stability_probe(build_trace(), m=99)
