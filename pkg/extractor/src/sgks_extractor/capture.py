"""Forward-pass capture: attention tensors and residual-norm signals.

Runs a transformer over rendered verification prompts and writes one SGKT
trace per prompt. Attention is taken post-softmax per head and per layer;
the scalar signal is the per-token L2 norm of the residual stream after each
selected block (``signal_point="pre"`` switches to the stream entering the
block). Payloads are serialized as float32 regardless of the model's compute
precision.

Prompts are processed in batches with right padding; a causal model's
attention rows and hidden states for real tokens are unaffected by trailing
pad positions, so each prompt's square attention block is sliced back out
before serialization. Out-of-memory errors halve the batch size down to 1
before giving up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import CapabilityError, ConfigurationError, ExtractionError
from .prompts import PromptSpec, ProbeTemplate, probe_prompts
from .sgkt import TraceLayer, filename_for, write_manifest, write_trace_file

_DTYPES = {
    "float32": torch.float32,
    "float16": torch.float16,
    "bfloat16": torch.bfloat16,
}


class ByteTokenizer:
    """UTF-8 byte-level tokenizer: id = byte value, plus one pad id.

    Exists so capture can run fully offline (tests, smoke checks) against
    randomly initialized models; real extractions use the checkpoint's own
    tokenizer. Follows the small slice of the tokenizer interface capture
    needs: calling it on a list of strings yields {"input_ids": [[int]]}.
    """

    vocab_size = 257
    pad_token_id = 256

    def __call__(self, texts: Sequence[str]) -> dict:
        return {"input_ids": [list(t.encode("utf-8")) for t in texts]}

    def convert_ids_to_tokens(self, ids: Sequence[int]) -> list[str]:
        return [f"byte_{i}" if i < 256 else "<pad>" for i in ids]


@dataclass(frozen=True)
class ExtractionJob:
    """Everything one capture run needs.

    model may be a checkpoint identifier (loaded via transformers with eager
    attention) or an in-process (model, tokenizer) pair. layers are real
    block indices; they are validated against the model's depth once the
    model is loaded.
    """

    model: object
    prompts: tuple[PromptSpec, ...]
    layers: tuple[int, ...]
    out_dir: Path
    dtype: str = "float32"
    signal_point: str = "post"
    store_hidden: bool = False
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "layers", tuple(int(w) for w in self.layers))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.prompts:
            raise ConfigurationError("an extraction job needs at least one prompt")
        seen = set()
        for spec in self.prompts:
            if spec.prompt_id in seen:
                raise ConfigurationError(f"duplicate prompt_id {spec.prompt_id!r}")
            seen.add(spec.prompt_id)
        if not self.layers:
            raise ConfigurationError("an extraction job needs at least one layer")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigurationError(f"duplicate layer indices: {list(self.layers)}")
        if any(w < 0 for w in self.layers):
            raise ConfigurationError(f"layer indices must be >= 0: {list(self.layers)}")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(
                f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}"
            )
        if self.signal_point not in ("post", "pre"):
            raise ConfigurationError(
                f"signal_point must be 'post' or 'pre', got {self.signal_point!r}"
            )
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class ExtractionResult:
    files: tuple[Path, ...]
    manifest: Path
    model_id: str


def _load_checkpoint(checkpoint: str, dtype: str = "float32"):
    """Load a checkpoint with eager attention, or fail as a config error."""
    from transformers import AutoModel

    try:
        return AutoModel.from_pretrained(
            checkpoint, attn_implementation="eager", dtype=_DTYPES[dtype]
        )
    except (OSError, ValueError) as exc:
        raise ConfigurationError(
            f"could not load model {checkpoint!r}: {exc}"
        ) from None


def _load(model_spec, device: str, dtype: str):
    """Resolve the job's model field to (model, tokenizer, model_id)."""
    if isinstance(model_spec, str):
        from transformers import AutoTokenizer

        # a weights-only checkpoint directory carries no tokenizer files;
        # transformers may raise or may return a degenerate tokenizer that
        # encodes everything to nothing, so probe before trusting it
        try:
            tokenizer = AutoTokenizer.from_pretrained(model_spec)
            if not tokenizer(["probe"])["input_ids"][0]:
                tokenizer = ByteTokenizer()
        except Exception:
            tokenizer = ByteTokenizer()
        model = _load_checkpoint(model_spec, dtype)
        model_id = model_spec
    else:
        try:
            model, tokenizer = model_spec
        except (TypeError, ValueError):
            raise ConfigurationError(
                "model must be a checkpoint id or a (model, tokenizer) pair"
            ) from None
        model_id = getattr(getattr(model, "config", None), "name_or_path", "") or "in-process"
    impl = getattr(getattr(model, "config", None), "_attn_implementation", None)
    if impl is not None and impl != "eager":
        if hasattr(model, "set_attn_implementation"):
            model.set_attn_implementation("eager")
        else:
            model.config._attn_implementation = "eager"
    model.eval()
    model.to(device)
    return model, tokenizer, model_id


def _encode(tokenizer, specs: Sequence[PromptSpec]) -> list[list[int]]:
    out = tokenizer([spec.render() for spec in specs])
    encoded = [list(map(int, row)) for row in out["input_ids"]]
    for spec, row in zip(specs, encoded):
        if len(row) < 2:
            raise ExtractionError(
                f"prompt {spec.prompt_id!r} tokenizes to {len(row)} token(s); "
                "need at least 2"
            )
    return encoded


def _pad_id(tokenizer) -> int:
    for attr in ("pad_token_id", "eos_token_id", "bos_token_id"):
        value = getattr(tokenizer, attr, None)
        if value is not None:
            return int(value)
    return 0


def _depth(model) -> int:
    depth = getattr(model.config, "num_hidden_layers", None)
    if depth is None:
        raise CapabilityError("model config does not report its layer count")
    return int(depth)


@torch.no_grad()
def _forward(model, chunk: Sequence[list[int]], pad_id: int, device: str):
    T_max = max(len(row) for row in chunk)
    ids = torch.full((len(chunk), T_max), pad_id, dtype=torch.long)
    mask = torch.zeros((len(chunk), T_max), dtype=torch.long)
    for b, row in enumerate(chunk):
        ids[b, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask[b, : len(row)] = 1
    out = model(
        input_ids=ids.to(device),
        attention_mask=mask.to(device),
        output_attentions=True,
        output_hidden_states=True,
    )
    attentions = getattr(out, "attentions", None)
    hidden_states = getattr(out, "hidden_states", None)
    if not attentions:
        raise CapabilityError(
            "model returned no attention weights; it must run with eager "
            "attention (attn_implementation='eager')"
        )
    if not hidden_states:
        raise CapabilityError("model returned no hidden states")
    return attentions, hidden_states


def _batches(
    model, encoded: Sequence[list[int]], pad_id: int, batch_size: int, device: str
) -> Iterator[tuple[int, tuple, tuple]]:
    """Yield (global prompt index, attentions, hidden_states) per chunk,
    halving the chunk size on out-of-memory errors."""
    i = 0
    size = batch_size
    while i < len(encoded):
        chunk = encoded[i : i + size]
        try:
            attentions, hidden_states = _forward(model, chunk, pad_id, device)
        except RuntimeError as exc:
            if "out of memory" not in str(exc).lower():
                raise
            if size == 1:
                raise ExtractionError(
                    "out of memory with batch size 1; prompts do not fit"
                ) from exc
            size = max(1, size // 2)
            continue
        yield i, attentions, hidden_states
        i += len(chunk)


def extract(job: ExtractionJob) -> ExtractionResult:
    """Run the job: one SGKT file per prompt plus a manifest, all atomic."""
    model, tokenizer, model_id = _load(job.model, job.device, job.dtype)
    depth = _depth(model)
    bad = [w for w in job.layers if w >= depth]
    if bad:
        raise ConfigurationError(
            f"layer indices {bad} out of range for a {depth}-layer model"
        )
    encoded = _encode(tokenizer, job.prompts)
    limit = getattr(model.config, "max_position_embeddings", None)
    if limit:
        over = [
            spec.prompt_id
            for spec, row in zip(job.prompts, encoded)
            if len(row) > int(limit)
        ]
        if over:
            raise ExtractionError(
                f"prompt(s) exceed the model's {limit}-position window: "
                + ", ".join(over)
            )

    job.out_dir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    entries: list[dict] = []
    pad_id = _pad_id(tokenizer)
    for start, attentions, hidden_states in _batches(
        model, encoded, pad_id, job.batch_size, job.device
    ):
        chunk = job.prompts[start : start + attentions[0].shape[0]]
        for b, spec in enumerate(chunk):
            T = len(encoded[start + b])
            layers = []
            for w in job.layers:
                att = attentions[w][b, :, :T, :T]
                source = hidden_states[w + 1] if job.signal_point == "post" else hidden_states[w]
                states = source[b, :T]
                signal = torch.linalg.vector_norm(states.to(torch.float32), dim=1)
                layers.append(
                    TraceLayer(
                        layer_index=w,
                        attention=att.to(torch.float32).cpu().numpy(),
                        signal=signal.cpu().numpy(),
                        hidden=(
                            states.to(torch.float32).cpu().numpy()
                            if job.store_hidden
                            else None
                        ),
                    )
                )
            path = job.out_dir / filename_for(spec.prompt_id)
            write_trace_file(path, layers, label=spec.label)
            files.append(path)
            entries.append(
                {"prompt_id": spec.prompt_id, "file": path.name, "label": spec.label}
            )
    manifest = write_manifest(job.out_dir, model_id, entries)
    return ExtractionResult(files=tuple(files), manifest=manifest, model_id=model_id)


def extract_dataset(
    model,
    out_dir: str | Path,
    layers: Sequence[int],
    templates: Sequence[ProbeTemplate] | None = None,
    entities: Sequence[dict] | None = None,
    n_pairs: int | None = None,
    include_bare: bool = False,
    **job_kwargs,
) -> ExtractionResult:
    """Instantiate the probe templates and extract the whole labeled set.

    With n_pairs=59 this emits the balanced 118-trace probe manifest
    (59 supported + 59 contradicted); include_bare adds unlabeled
    context-free prompts on top.
    """
    kwargs = {}
    if templates is not None:
        kwargs["templates"] = templates
    if entities is not None:
        kwargs["entities"] = entities
    specs = probe_prompts(n_pairs=n_pairs, include_bare=include_bare, **kwargs)
    job = ExtractionJob(
        model=model,
        prompts=tuple(specs),
        layers=tuple(layers),
        out_dir=Path(out_dir),
        **job_kwargs,
    )
    return extract(job)
