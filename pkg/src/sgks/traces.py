"""Activation traces and the SGKT on-disk format.

A trace is the unit of exchange for the whole toolkit: per-layer post-softmax
attention tensors plus a per-token scalar signal (optionally the full hidden
state matrix), with an optional binary label and the prompt's tokenization.

The SGKT container is deliberately dumb: little-endian integers, float32
payloads, no compression. Layout (all integers little-endian):

    bytes 0-3   magic "SGKT"
    u16         version (currently 1)
    u16         flags     bit0 hidden present, bit1 label present,
                          bit2 tokenization present
    u32         layer count
    per layer:
        u32 layer_index, u32 T, u32 H, u32 d (0 when no hidden states)
        f32[H*T*T]  attention, [head][row][col] order
        f32[T]      signal
        f32[T*d]    hidden states, row-major (only when flagged)
    u8          label (only when flagged)
    tokenization (only when flagged):
        u32 count, then per token: u32 byte length + UTF-8 bytes

Identifiers (model_id, prompt_id) are not part of the binary payload; batches
carry them in a JSON sidecar manifest (see write_dataset / read_dataset).

Floats are stored exactly as held in memory (float32), so write -> read is
bit-exact on every floating payload. Diagnostics promote to float64 internally.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import FormatError, TruncationError, ValidationError

MAGIC = b"SGKT"
VERSION = 1
FLAG_HIDDEN = 1 << 0
FLAG_LABEL = 1 << 1
FLAG_TOKENIZATION = 1 << 2
KNOWN_FLAGS = FLAG_HIDDEN | FLAG_LABEL | FLAG_TOKENIZATION

ROW_SUM_TOL = 1e-4

_F4 = np.dtype("<f4")


def _readonly_f32(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float32))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LayerRecord:
    """One transformer layer's worth of material.

    attention has shape (T, T, H): post-softmax weights, row i attending over
    column j, one slice per head. signal is the per-token scalar channel
    (typically the residual-stream L2 norm). hidden, when present, is the
    (T, d) hidden-state matrix the signal was derived from.
    """

    layer_index: int
    attention: np.ndarray
    signal: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "attention", _readonly_f32(self.attention, "attention"))
        object.__setattr__(self, "signal", _readonly_f32(self.signal, "signal"))
        if self.hidden is not None:
            object.__setattr__(self, "hidden", _readonly_f32(self.hidden, "hidden"))

    @property
    def T(self) -> int:
        return self.attention.shape[0]

    @property
    def H(self) -> int:
        return self.attention.shape[2]


@dataclass(frozen=True, eq=False)
class ActivationTrace:
    """An ordered stack of LayerRecords for one prompt."""

    model_id: str
    prompt_id: str
    layers: tuple[LayerRecord, ...] = field(default_factory=tuple)
    label: int | None = None
    tokenization: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.tokenization is not None:
            object.__setattr__(self, "tokenization", tuple(self.tokenization))

    @property
    def T(self) -> int:
        return self.layers[0].T

    def layer(self, layer_index: int) -> LayerRecord:
        for rec in self.layers:
            if rec.layer_index == layer_index:
                return rec
        raise ValidationError(f"trace {self.prompt_id!r} has no layer {layer_index}")

    @property
    def layer_indices(self) -> tuple[int, ...]:
        return tuple(rec.layer_index for rec in self.layers)


def validate_trace(trace: ActivationTrace) -> None:
    """Check every structural invariant; raise ValidationError naming the
    first offending (layer, head, row)."""
    if not trace.layers:
        raise ValidationError("trace has no layers")
    T = trace.layers[0].T
    if T < 2:
        raise ValidationError(f"token count T={T} is below the minimum of 2")
    prev_index = -1
    for rec in trace.layers:
        li = rec.layer_index
        if li < 0:
            raise ValidationError(f"negative layer_index {li}")
        if li <= prev_index:
            raise ValidationError(
                f"layer indices must be unique and ascending (saw {li} after {prev_index})"
            )
        prev_index = li
        att = rec.attention
        if att.ndim != 3 or att.shape[0] != att.shape[1]:
            raise ValidationError(
                f"layer {li}: attention must be (T, T, H), got {att.shape}"
            )
        if rec.T != T:
            raise ValidationError(
                f"layer {li}: token count {rec.T} differs from layer "
                f"{trace.layers[0].layer_index} ({T})"
            )
        if rec.H < 1:
            raise ValidationError(f"layer {li}: needs at least one head")
        if not np.isfinite(att).all():
            raise ValidationError(f"layer {li}: attention has non-finite entries")
        if (att < 0).any():
            h, i, j = _first_bad(att < 0)
            raise ValidationError(
                f"layer {li}: negative attention at head {h}, row {i}, col {j}"
            )
        # accumulate row sums in f64; f32 storage noise stays well inside 1e-4
        row_sums = att.astype(np.float64).sum(axis=1)  # (T, H)
        bad = np.abs(row_sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            i, h = np.argwhere(bad)[0]
            raise ValidationError(
                f"layer {li}: attention row {i} of head {h} sums to "
                f"{row_sums[i, h]:.6f}, expected 1 within {ROW_SUM_TOL}"
            )
        if rec.signal.shape != (T,):
            raise ValidationError(
                f"layer {li}: signal shape {rec.signal.shape} does not match T={T}"
            )
        if not np.isfinite(rec.signal).all():
            raise ValidationError(f"layer {li}: signal has non-finite entries")
        if rec.hidden is not None:
            if rec.hidden.ndim != 2 or rec.hidden.shape[0] != T:
                raise ValidationError(
                    f"layer {li}: hidden shape {rec.hidden.shape} is not (T, d)"
                )
            if not np.isfinite(rec.hidden).all():
                raise ValidationError(f"layer {li}: hidden has non-finite entries")
    if trace.label is not None and trace.label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {trace.label!r}")
    if trace.tokenization is not None and len(trace.tokenization) == 0:
        raise ValidationError("tokenization flag set but token list is empty")
    hiddens = [rec.hidden is not None for rec in trace.layers]
    if any(hiddens) and not all(hiddens):
        raise ValidationError("hidden states must be present on all layers or none")


def _first_bad(mask: np.ndarray) -> tuple[int, int, int]:
    i, j, h = np.argwhere(mask)[0]
    return int(h), int(i), int(j)


def trace_equals(a: ActivationTrace, b: ActivationTrace, check_ids: bool = False) -> bool:
    """Bit-exact payload equality (ids compared only when check_ids)."""
    if check_ids and (a.model_id != b.model_id or a.prompt_id != b.prompt_id):
        return False
    if a.label != b.label or a.tokenization != b.tokenization:
        return False
    if len(a.layers) != len(b.layers):
        return False
    for ra, rb in zip(a.layers, b.layers):
        if ra.layer_index != rb.layer_index:
            return False
        if not np.array_equal(ra.attention, rb.attention):
            return False
        if not np.array_equal(ra.signal, rb.signal):
            return False
        if (ra.hidden is None) != (rb.hidden is None):
            return False
        if ra.hidden is not None and not np.array_equal(ra.hidden, rb.hidden):
            return False
    return True


# ---------------------------------------------------------------------------
# binary io


def _trace_flags(trace: ActivationTrace) -> int:
    flags = 0
    if trace.layers and trace.layers[0].hidden is not None:
        flags |= FLAG_HIDDEN
    if trace.label is not None:
        flags |= FLAG_LABEL
    if trace.tokenization is not None:
        flags |= FLAG_TOKENIZATION
    return flags


def write_trace(trace: ActivationTrace, dest: str | Path | BinaryIO) -> int:
    """Serialize to SGKT. Returns the number of bytes written."""
    validate_trace(trace)
    buf = io.BytesIO()
    flags = _trace_flags(trace)
    buf.write(MAGIC)
    buf.write(struct.pack("<HHI", VERSION, flags, len(trace.layers)))
    for rec in trace.layers:
        d = 0 if rec.hidden is None else rec.hidden.shape[1]
        buf.write(struct.pack("<IIII", rec.layer_index, rec.T, rec.H, d))
        # storage order is [head][row][col]; memory layout is (T, T, H)
        buf.write(np.transpose(rec.attention, (2, 0, 1)).astype(_F4).tobytes())
        buf.write(rec.signal.astype(_F4).tobytes())
        if rec.hidden is not None:
            buf.write(rec.hidden.astype(_F4).tobytes())
    if flags & FLAG_LABEL:
        buf.write(struct.pack("<B", trace.label))
    if flags & FLAG_TOKENIZATION:
        buf.write(struct.pack("<I", len(trace.tokenization)))
        for tok in trace.tokenization:
            raw = tok.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
    payload = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        Path(dest).write_bytes(payload)
    return len(payload)


class _Cursor:
    """Bounds-checked reader over one in-memory SGKT blob."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(self.pos + n, len(self.data), what)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype=_F4, count=count).astype(np.float32)


def read_trace(
    source: str | Path | BinaryIO | bytes,
    *,
    model_id: str = "",
    prompt_id: str = "",
) -> ActivationTrace:
    """Parse and fully validate one SGKT file.

    The binary carries no identifiers; pass model_id / prompt_id to attach
    them (read_dataset does this from the manifest).
    """
    if isinstance(source, bytes):
        data = source
    elif hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    cur = _Cursor(data)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, flags, n_layers = cur.unpack("<HHI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported SGKT version {version}")
    if flags & ~KNOWN_FLAGS:
        raise FormatError(f"unknown flag bits 0x{flags & ~KNOWN_FLAGS:x}")
    if n_layers == 0:
        raise FormatError("layer count is zero")
    layers = []
    for k in range(n_layers):
        layer_index, T, H, d = cur.unpack("<IIII", f"layer {k} header")
        if T == 0 or H == 0:
            raise FormatError(f"layer {k}: zero dimension (T={T}, H={H})")
        if (flags & FLAG_HIDDEN) and d == 0:
            raise FormatError(f"layer {k}: hidden flag set but d=0")
        if not (flags & FLAG_HIDDEN) and d != 0:
            raise FormatError(f"layer {k}: d={d} but hidden flag unset")
        att = cur.floats(H * T * T, f"layer {k} attention").reshape(H, T, T)
        att = np.ascontiguousarray(np.transpose(att, (1, 2, 0)))
        sig = cur.floats(T, f"layer {k} signal")
        hidden = None
        if flags & FLAG_HIDDEN:
            hidden = cur.floats(T * d, f"layer {k} hidden").reshape(T, d)
        layers.append(LayerRecord(layer_index, att, sig, hidden))
    label = None
    if flags & FLAG_LABEL:
        (label,) = cur.unpack("<B", "label")
        label = int(label)
    tokenization = None
    if flags & FLAG_TOKENIZATION:
        (count,) = cur.unpack("<I", "token count")
        toks = []
        for t in range(count):
            (nbytes,) = cur.unpack("<I", f"token {t} length")
            raw = cur.take(nbytes, f"token {t}")
            try:
                toks.append(raw.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"token {t} is not valid UTF-8: {exc}") from None
        tokenization = tuple(toks)
    if cur.pos != len(data):
        raise FormatError(
            f"{len(data) - cur.pos} trailing bytes after declared payload"
        )
    trace = ActivationTrace(
        model_id=model_id,
        prompt_id=prompt_id,
        layers=tuple(layers),
        label=label,
        tokenization=tokenization,
    )
    validate_trace(trace)
    return trace


# ---------------------------------------------------------------------------
# batches and the sidecar manifest

MANIFEST_NAME = "manifest.json"


def write_dataset(
    traces: Sequence[ActivationTrace],
    directory: str | Path,
    model_id: str | None = None,
) -> Path:
    """Write one .sgkt per trace plus a JSON manifest; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    entries = []
    for trace in traces:
        pid = trace.prompt_id
        if not pid:
            raise ValidationError("traces in a dataset need non-empty prompt_id")
        if pid in seen:
            raise ValidationError(f"duplicate prompt_id {pid!r} in dataset")
        seen.add(pid)
        fname = pid.replace("/", "_").replace("\\", "_") + ".sgkt"
        write_trace(trace, directory / fname)
        entry = {"prompt_id": pid, "file": fname}
        if trace.label is not None:
            entry["label"] = trace.label
        if trace.model_id:
            entry["model_id"] = trace.model_id
        entries.append(entry)
    manifest = {
        "model_id": model_id or (traces[0].model_id if traces else ""),
        "traces": entries,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def read_dataset(manifest_path: str | Path) -> list[ActivationTrace]:
    """Load every trace listed in a manifest, restoring ids and labels."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    base = manifest_path.parent
    default_model = manifest.get("model_id", "")
    out = []
    for entry in manifest.get("traces", []):
        trace = read_trace(
            base / entry["file"],
            model_id=entry.get("model_id", default_model),
            prompt_id=entry.get("prompt_id", ""),
        )
        if "label" in entry and entry["label"] is not None:
            expected = int(entry["label"])
            if trace.label is not None and trace.label != expected:
                raise ValidationError(
                    f"{entry['file']}: manifest label {expected} disagrees with "
                    f"embedded label {trace.label}"
                )
            if trace.label is None:
                trace = ActivationTrace(
                    model_id=trace.model_id,
                    prompt_id=trace.prompt_id,
                    layers=trace.layers,
                    label=expected,
                    tokenization=trace.tokenization,
                )
        out.append(trace)
    return out


def load_traces(path: str | Path) -> list[ActivationTrace]:
    """Convenience loader: a .sgkt file, a manifest.json, or a directory."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such trace source: {path}")
    if path.is_dir():
        manifest = path / MANIFEST_NAME
        if manifest.exists():
            return read_dataset(manifest)
        files = sorted(path.glob("*.sgkt"))
        if not files:
            raise ValidationError(f"no manifest or .sgkt files under {path}")
        return [read_trace(f, prompt_id=f.stem) for f in files]
    if path.name.endswith(".json"):
        return read_dataset(path)
    return [read_trace(path, prompt_id=path.stem)]


def expected_byte_length(
    shapes: Iterable[tuple[int, int, int, int]],
    label: bool = False,
    token_byte_lengths: Iterable[int] = (),
) -> int:
    """Byte length a well-formed SGKT file must have.

    shapes: per layer (layer_index is irrelevant) tuples (T, T, H, d).
    Kept next to the writer so tests can cross-check against the layout.
    """
    total = 4 + 2 + 2 + 4
    for (T, T2, H, d) in shapes:
        total += 16 + 4 * (H * T * T2) + 4 * T + 4 * T * d
    if label:
        total += 1
    toks = list(token_byte_lengths)
    if toks:
        total += 4 + sum(4 + n for n in toks)
    return total
