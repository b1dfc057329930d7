"""Extract SGKT attention/signal traces from transformer checkpoints."""

from .capture import (
    ByteTokenizer,
    ExtractionJob,
    ExtractionResult,
    extract,
    extract_dataset,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    ExtractionError,
    ExtractorError,
    ManifestError,
    UsageError,
)
from .prompts import (
    DEFAULT_ENTITIES,
    DEFAULT_TEMPLATES,
    TEMPLATE,
    ProbeTemplate,
    PromptSpec,
    load_prompts_jsonl,
    probe_prompts,
)
from .sgkt import (
    MANIFEST_NAME,
    TraceLayer,
    encode_trace,
    filename_for,
    write_manifest,
    write_trace_file,
)

__version__ = "0.1.0"

__all__ = [
    "ByteTokenizer",
    "CapabilityError",
    "ConfigurationError",
    "DEFAULT_ENTITIES",
    "DEFAULT_TEMPLATES",
    "ExtractionError",
    "ExtractionJob",
    "ExtractionResult",
    "ExtractorError",
    "MANIFEST_NAME",
    "ManifestError",
    "ProbeTemplate",
    "PromptSpec",
    "TEMPLATE",
    "TraceLayer",
    "UsageError",
    "encode_trace",
    "extract",
    "extract_dataset",
    "filename_for",
    "load_prompts_jsonl",
    "probe_prompts",
    "write_manifest",
    "write_trace_file",
]
