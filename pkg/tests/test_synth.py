"""Synthetic trace generator: regime targets, determinism, reachability."""

import numpy as np
import pytest

from sgks.diagnostics import CutoffSpec, DiagConfig, hfer_score, layer_diagnostics
from sgks.errors import ConfigurationError
from sgks.synth import DEFAULT_TARGETS, REGIME_LABELS, Regime, SynthConfig, synth_dataset, synth_trace
from sgks.traces import validate_trace


class TestSingleTrace:
    def test_trace_is_valid_and_labelled(self):
        trace = synth_trace(SynthConfig(regime=Regime.CONTRADICTED, seed=3))
        validate_trace(trace)
        assert trace.label == 0
        assert trace.model_id == "synthetic"
        assert len(trace.layers) == 8

    def test_regimes_hit_their_targets(self):
        for regime, target in DEFAULT_TARGETS.items():
            scores = [
                hfer_score(synth_trace(SynthConfig(regime=regime, seed=s)))
                for s in range(6)
            ]
            assert abs(np.mean(scores) - target) < 0.03, regime

    def test_deterministic(self):
        cfg = SynthConfig(regime=Regime.SUPPORTED, seed=17)
        a, b = synth_trace(cfg), synth_trace(cfg)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.attention, lb.attention)
            assert np.array_equal(la.signal, lb.signal)

    def test_explicit_target_override(self):
        cfg = SynthConfig(target_hfer_mean=0.30, target_hfer_sd=1e-4, seed=5)
        assert hfer_score(synth_trace(cfg)) == pytest.approx(0.30, abs=0.02)

    def test_unreachable_target_small_T(self):
        with pytest.raises(ConfigurationError, match="unreachable"):
            synth_trace(SynthConfig(T=4, target_hfer_mean=0.9, seed=0))

    def test_cutoff_robustness_of_separation(self):
        # the classes must stay ordered under every mass cutoff in the
        # sweep grid, not just the default one
        sup = synth_trace(SynthConfig(regime=Regime.SUPPORTED, seed=21))
        con = synth_trace(SynthConfig(regime=Regime.CONTRADICTED, seed=22))
        for c in (10.0, 20.0, 40.0):
            config = DiagConfig(cutoff=CutoffSpec.mass(c))
            assert hfer_score(sup, config) > hfer_score(con, config)

    def test_window_layers_agree(self):
        trace = synth_trace(SynthConfig(regime=Regime.SUPPORTED, seed=9))
        hfers = [d.hfer for d in layer_diagnostics(trace)]
        assert np.std(hfers) < 0.05


class TestDataset:
    def test_labels_ids_and_balance(self):
        traces = synth_dataset(5, SynthConfig(seed=2))
        assert len(traces) == 10
        labels = [t.label for t in traces]
        assert labels.count(1) == 5 and labels.count(0) == 5
        ids = [t.prompt_id for t in traces]
        assert len(set(ids)) == 10
        assert all(i.startswith("synth-") for i in ids)

    def test_distinct_seeds_per_trace(self):
        traces = synth_dataset(3, SynthConfig(seed=4))
        sigs = {t.layers[0].signal.tobytes() for t in traces}
        assert len(sigs) == len(traces)

    def test_dataset_deterministic(self):
        a = synth_dataset(2, SynthConfig(seed=8))
        b = synth_dataset(2, SynthConfig(seed=8))
        for ta, tb in zip(a, b):
            assert ta.prompt_id == tb.prompt_id
            assert np.array_equal(ta.layers[3].signal, tb.layers[3].signal)

    def test_bare_regime_unlabelled(self):
        assert REGIME_LABELS[Regime.BARE] is None
        trace = synth_trace(SynthConfig(regime=Regime.BARE, seed=1))
        assert trace.label is None

    def test_size_validation(self):
        with pytest.raises(ConfigurationError):
            synth_dataset(0)
