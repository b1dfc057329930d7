"""Byte-level and validation tests for the SGKT writer."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from conftest import read_trace
from sgks_extractor import (
    MANIFEST_NAME,
    ExtractionError,
    ManifestError,
    TraceLayer,
    encode_trace,
    filename_for,
    write_manifest,
    write_trace_file,
)


def layer(
    index: int = 0,
    T: int = 3,
    H: int = 2,
    hidden_width: int = 0,
    seed: int = 0,
) -> TraceLayer:
    rng = np.random.default_rng(seed)
    raw = rng.random((H, T, T)).astype(np.float32)
    attention = raw / raw.sum(axis=2, keepdims=True)
    return TraceLayer(
        layer_index=index,
        attention=attention,
        signal=rng.random(T).astype(np.float32),
        hidden=(
            rng.random((T, hidden_width)).astype(np.float32)
            if hidden_width
            else None
        ),
    )


class TestGoldenBytes:
    def test_minimal_trace_bytes_exactly(self):
        attention = np.array([[[1.0, 0.0], [0.25, 0.75]]], dtype=np.float32)
        signal = np.array([1.5, 2.5], dtype=np.float32)
        blob = encode_trace(
            [TraceLayer(layer_index=4, attention=attention, signal=signal)]
        )
        expected = (
            struct.pack("<4sHHI", b"SGKT", 1, 0, 1)
            + struct.pack("<IIII", 4, 2, 1, 0)
            + attention.astype("<f4").tobytes()
            + signal.astype("<f4").tobytes()
        )
        assert blob == expected

    def test_label_appends_one_byte_and_sets_flag(self):
        rec = layer()
        plain = encode_trace([rec])
        labeled = encode_trace([rec], label=1)
        assert len(labeled) == len(plain) + 1
        assert labeled[-1] == 1
        (_, _, flags_plain, _) = struct.unpack_from("<4sHHI", plain, 0)
        (_, _, flags_labeled, _) = struct.unpack_from("<4sHHI", labeled, 0)
        assert flags_plain == 0
        assert flags_labeled == 2

    def test_hidden_sets_flag_and_width(self):
        blob = encode_trace([layer(hidden_width=5)])
        (_, _, flags, _) = struct.unpack_from("<4sHHI", blob, 0)
        assert flags == 1
        (_, _, _, d) = struct.unpack_from("<IIII", blob, 12)
        assert d == 5

    def test_multi_layer_roundtrip_through_independent_reader(self, tmp_path):
        records = [layer(index=2, seed=1), layer(index=5, seed=2, hidden_width=4)]
        with pytest.raises(ExtractionError, match="hidden"):
            encode_trace(records)  # hidden must be all-or-none
        records = [
            layer(index=2, seed=1, hidden_width=4),
            layer(index=5, seed=2, hidden_width=4),
        ]
        path = tmp_path / "t.sgkt"
        write_trace_file(path, records, label=0)
        flags, decoded, label = read_trace(path)
        assert flags == 1 | 2
        assert label == 0
        assert [d["layer_index"] for d in decoded] == [2, 5]
        for rec, d in zip(records, decoded):
            np.testing.assert_array_equal(d["attention"], rec.attention)
            np.testing.assert_array_equal(d["signal"], rec.signal)
            np.testing.assert_array_equal(d["hidden"], rec.hidden)

    def test_float64_inputs_are_stored_as_float32(self, tmp_path):
        attention = np.full((1, 2, 2), 0.5, dtype=np.float64)
        signal = np.array([1 / 3, 2 / 3], dtype=np.float64)
        path = tmp_path / "t.sgkt"
        write_trace_file(
            path, [TraceLayer(layer_index=0, attention=attention, signal=signal)]
        )
        _, decoded, _ = read_trace(path)
        assert decoded[0]["signal"].dtype == np.dtype("<f4")
        np.testing.assert_array_equal(
            decoded[0]["signal"], signal.astype(np.float32)
        )


class TestLayerValidation:
    def test_rejects_single_token(self):
        with pytest.raises(ExtractionError, match="at least 2 tokens"):
            layer(T=1)

    def test_rejects_non_square_attention(self):
        with pytest.raises(ExtractionError, match="square"):
            TraceLayer(
                layer_index=0,
                attention=np.full((1, 2, 3), 0.5, dtype=np.float32),
                signal=np.zeros(2, dtype=np.float32),
            )

    def test_rejects_signal_length_mismatch(self):
        rec = layer(T=3)
        with pytest.raises(ExtractionError):
            TraceLayer(
                layer_index=0, attention=rec.attention, signal=rec.signal[:2]
            )

    def test_rejects_negative_attention(self):
        rec = layer(T=2, H=1)
        attention = rec.attention.copy()
        attention[0, 0] = [-0.1, 1.1]
        with pytest.raises(ExtractionError, match="negative"):
            TraceLayer(layer_index=0, attention=attention, signal=rec.signal)

    def test_rejects_rows_that_do_not_sum_to_one(self):
        rec = layer(T=2, H=1)
        with pytest.raises(ExtractionError, match="stochasticity"):
            TraceLayer(
                layer_index=0, attention=rec.attention * 0.9, signal=rec.signal
            )

    def test_accepts_rows_within_tolerance(self):
        rec = layer(T=2, H=1)
        nudged = rec.attention * (1 + 5e-5)
        TraceLayer(layer_index=0, attention=nudged, signal=rec.signal)

    def test_rejects_non_finite_values(self):
        rec = layer(T=2, H=1)
        signal = rec.signal.copy()
        signal[0] = np.nan
        with pytest.raises(ExtractionError, match="non-finite"):
            TraceLayer(layer_index=0, attention=rec.attention, signal=signal)

    def test_rejects_hidden_row_mismatch(self):
        rec = layer(T=3, H=1)
        with pytest.raises(ExtractionError):
            TraceLayer(
                layer_index=0,
                attention=rec.attention,
                signal=rec.signal,
                hidden=np.zeros((2, 4), dtype=np.float32),
            )


class TestEncodeValidation:
    def test_rejects_empty_layer_list(self):
        with pytest.raises(ExtractionError, match="at least one layer"):
            encode_trace([])

    def test_rejects_duplicate_layer_indices(self):
        with pytest.raises(ExtractionError, match="duplicate layer index"):
            encode_trace([layer(index=3, seed=1), layer(index=3, seed=2)])

    def test_rejects_bad_label(self):
        with pytest.raises(ExtractionError, match="label"):
            encode_trace([layer()], label=2)


class TestWriteTraceFile:
    def test_leaves_no_temp_file(self, tmp_path):
        path = tmp_path / "t.sgkt"
        write_trace_file(path, [layer()])
        assert path.exists()
        assert list(tmp_path.iterdir()) == [path]

    def test_failed_encode_preserves_existing_file(self, tmp_path):
        path = tmp_path / "t.sgkt"
        write_trace_file(path, [layer(seed=1)])
        before = path.read_bytes()
        with pytest.raises(ExtractionError):
            write_trace_file(path, [layer(seed=2)], label=7)
        assert path.read_bytes() == before

    def test_overwrites_in_place(self, tmp_path):
        path = tmp_path / "t.sgkt"
        write_trace_file(path, [layer(seed=1)])
        write_trace_file(path, [layer(seed=2)])
        _, decoded, _ = read_trace(path)
        np.testing.assert_array_equal(decoded[0]["signal"], layer(seed=2).signal)


class TestFilenames:
    def test_path_separators_are_flattened(self):
        assert filename_for("a/b\\c") == "a_b_c.sgkt"

    def test_plain_id_keeps_its_name(self):
        assert filename_for("probe-001-supported") == "probe-001-supported.sgkt"


class TestManifest:
    def test_structure_and_label_omission(self, tmp_path):
        path = write_manifest(
            tmp_path,
            "some-model",
            [
                {"prompt_id": "a", "file": "a.sgkt", "label": 1},
                {"prompt_id": "b", "file": "b.sgkt", "label": None},
            ],
        )
        assert path.name == MANIFEST_NAME
        data = json.loads(path.read_text())
        assert data["model_id"] == "some-model"
        assert data["traces"][0]["label"] == 1
        assert "label" not in data["traces"][1]
        assert all(t["model_id"] == "some-model" for t in data["traces"])

    def test_duplicate_prompt_ids_rejected(self, tmp_path):
        with pytest.raises(ManifestError, match="duplicate"):
            write_manifest(
                tmp_path,
                "m",
                [
                    {"prompt_id": "a", "file": "a.sgkt"},
                    {"prompt_id": "a", "file": "b.sgkt"},
                ],
            )

    def test_empty_prompt_id_rejected(self, tmp_path):
        with pytest.raises(ManifestError, match="non-empty"):
            write_manifest(tmp_path, "m", [{"prompt_id": "", "file": "x.sgkt"}])
