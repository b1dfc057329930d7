"""Shared fixtures: a tiny randomly initialized transformer and an
independent struct-level SGKT decoder used as the oracle for writer output."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest
import torch
from transformers import GPT2Config, GPT2Model

from sgks_extractor import ByteTokenizer


def tiny_config() -> GPT2Config:
    return GPT2Config(
        n_layer=6,
        n_head=2,
        n_embd=32,
        vocab_size=259,
        n_positions=256,
        bos_token_id=257,
        eos_token_id=257,
        attn_implementation="eager",
    )


@pytest.fixture(scope="session")
def tiny_model() -> GPT2Model:
    torch.manual_seed(7)
    return GPT2Model(tiny_config()).eval()


@pytest.fixture(scope="session")
def byte_tokenizer() -> ByteTokenizer:
    return ByteTokenizer()


@pytest.fixture(scope="session")
def model_pair(tiny_model, byte_tokenizer):
    return (tiny_model, byte_tokenizer)


@pytest.fixture(scope="session")
def checkpoint_dir(tiny_model, tmp_path_factory) -> Path:
    """The tiny model saved as a loadable checkpoint directory."""
    path = tmp_path_factory.mktemp("checkpoint") / "tiny"
    tiny_model.save_pretrained(path)
    return path


def read_trace(path: str | Path):
    """Decode an SGKT file with plain struct/frombuffer calls.

    Deliberately independent of the writer so tests cross-check the format:
    returns (flags, layers, label) where each layer is a dict with
    layer_index, attention (H, T, T), signal (T,), hidden (T, d) or None.
    """
    blob = Path(path).read_bytes()
    magic, version, flags, n_layers = struct.unpack_from("<4sHHI", blob, 0)
    assert magic == b"SGKT", "bad magic"
    assert version == 1, f"unexpected version {version}"
    offset = 12
    layers = []
    for _ in range(n_layers):
        layer_index, T, H, d = struct.unpack_from("<IIII", blob, offset)
        offset += 16
        attention = np.frombuffer(blob, "<f4", H * T * T, offset).reshape(H, T, T)
        offset += 4 * H * T * T
        signal = np.frombuffer(blob, "<f4", T, offset)
        offset += 4 * T
        hidden = None
        if flags & 1:
            assert d > 0, "hidden flag set but width is zero"
            hidden = np.frombuffer(blob, "<f4", T * d, offset).reshape(T, d)
            offset += 4 * T * d
        else:
            assert d == 0, "hidden flag clear but width is nonzero"
        layers.append(
            {
                "layer_index": layer_index,
                "attention": attention,
                "signal": signal,
                "hidden": hidden,
            }
        )
    label = None
    if flags & 2:
        (label,) = struct.unpack_from("<B", blob, offset)
        offset += 1
    assert offset == len(blob), "trailing bytes after payload"
    return flags, layers, label
