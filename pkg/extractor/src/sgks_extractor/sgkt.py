"""Writer for the SGKT activation-trace container.

This is an independent implementation of the format the verification toolkit
consumes; nothing here imports that toolkit. Layout (all integers
little-endian):

    bytes 0-3   magic "SGKT"
    u16         version (1)
    u16         flags     bit0 hidden present, bit1 label present,
                          bit2 tokenization present
    u32         layer count
    per layer:
        u32 layer_index, u32 T, u32 H, u32 d (0 when no hidden states)
        f32[H*T*T]  attention, [head][row][col] order
        f32[T]      signal
        f32[T*d]    hidden states, row-major (only when flagged)
    u8          label (only when flagged)

This writer never sets the tokenization flag; identifiers travel in the JSON
sidecar manifest, not in the binary payload. Files are written atomically
(temp file in the same directory, then rename).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ExtractionError, ManifestError

MAGIC = b"SGKT"
VERSION = 1
FLAG_HIDDEN = 1 << 0
FLAG_LABEL = 1 << 1
MANIFEST_NAME = "manifest.json"

# softmax rows serialized as f32 cannot sum to exactly 1; the reader on the
# other side tolerates this much drift, so refuse anything worse up front
ROW_SUM_TOL = 1e-4


def _as_f32(x: np.ndarray, name: str, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float32))
    if arr.ndim != ndim:
        raise ExtractionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ExtractionError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TraceLayer:
    """One captured layer, already in serialization order.

    attention is (H, T, T) post-softmax — head-major, matching the byte
    layout. signal is the per-token scalar channel, hidden the optional
    (T, d) state matrix.
    """

    layer_index: int
    attention: np.ndarray
    signal: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        att = _as_f32(self.attention, "attention", 3)
        sig = _as_f32(self.signal, "signal", 1)
        H, T, T2 = att.shape
        if T != T2:
            raise ExtractionError(f"attention must be square per head, got {att.shape}")
        if T < 2:
            raise ExtractionError(f"need at least 2 tokens, got T={T}")
        if sig.shape[0] != T:
            raise ExtractionError(
                f"signal length {sig.shape[0]} does not match T={T}"
            )
        if np.any(att < 0):
            raise ExtractionError("attention has negative entries")
        worst = float(np.abs(att.sum(axis=2) - 1.0).max())
        if worst > ROW_SUM_TOL:
            raise ExtractionError(
                f"attention rows deviate from stochasticity by {worst:.3g} "
                f"(tolerance {ROW_SUM_TOL})"
            )
        object.__setattr__(self, "attention", att)
        object.__setattr__(self, "signal", sig)
        if self.hidden is not None:
            hid = _as_f32(self.hidden, "hidden", 2)
            if hid.shape[0] != T:
                raise ExtractionError(
                    f"hidden rows {hid.shape[0]} do not match T={T}"
                )
            object.__setattr__(self, "hidden", hid)

    @property
    def T(self) -> int:
        return self.attention.shape[1]

    @property
    def H(self) -> int:
        return self.attention.shape[0]

    @property
    def d(self) -> int:
        return 0 if self.hidden is None else self.hidden.shape[1]


def encode_trace(layers: Sequence[TraceLayer], label: int | None = None) -> bytes:
    """Serialize one trace to SGKT bytes."""
    layers = list(layers)
    if not layers:
        raise ExtractionError("a trace needs at least one layer")
    with_hidden = sum(1 for rec in layers if rec.hidden is not None)
    if with_hidden not in (0, len(layers)):
        raise ExtractionError(
            "hidden states must be present on every layer or on none"
        )
    if label is not None and label not in (0, 1):
        raise ExtractionError(f"label must be 0 or 1, got {label!r}")
    seen = set()
    for rec in layers:
        if rec.layer_index in seen:
            raise ExtractionError(f"duplicate layer index {rec.layer_index}")
        seen.add(rec.layer_index)

    flags = 0
    if with_hidden:
        flags |= FLAG_HIDDEN
    if label is not None:
        flags |= FLAG_LABEL

    parts = [struct.pack("<4sHHI", MAGIC, VERSION, flags, len(layers))]
    for rec in layers:
        parts.append(struct.pack("<IIII", rec.layer_index, rec.T, rec.H, rec.d))
        parts.append(rec.attention.astype("<f4").tobytes())
        parts.append(rec.signal.astype("<f4").tobytes())
        if rec.hidden is not None:
            parts.append(rec.hidden.astype("<f4").tobytes())
    if label is not None:
        parts.append(struct.pack("<B", label))
    return b"".join(parts)


def write_trace_file(
    path: str | Path, layers: Sequence[TraceLayer], label: int | None = None
) -> Path:
    """Encode and write atomically: temp file beside the target, then rename."""
    path = Path(path)
    payload = encode_trace(layers, label)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    return path


def filename_for(prompt_id: str) -> str:
    return prompt_id.replace("/", "_").replace("\\", "_") + ".sgkt"


def write_manifest(
    directory: str | Path,
    model_id: str,
    entries: Sequence[Mapping],
) -> Path:
    """Write the JSON sidecar listing every trace in a batch.

    Each entry carries prompt_id and file, plus label when the prompt had
    one. Duplicate or empty prompt ids are a manifest error.
    """
    directory = Path(directory)
    seen: set[str] = set()
    rows = []
    for entry in entries:
        pid = entry.get("prompt_id", "")
        if not pid:
            raise ManifestError("manifest entries need a non-empty prompt_id")
        if pid in seen:
            raise ManifestError(f"duplicate prompt_id {pid!r}")
        seen.add(pid)
        row = {"prompt_id": pid, "file": entry["file"]}
        if entry.get("label") is not None:
            row["label"] = int(entry["label"])
        row["model_id"] = model_id
        rows.append(row)
    manifest = {"model_id": model_id, "traces": rows}
    path = directory / MANIFEST_NAME
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path
