"""Key-projection capture adapter for vision-language checkpoints.

Hooks the key-projection output of selected decoder layers during inference
over a prompt list, labels every token position with its modality (text /
image / other), and writes the results in the kspace dump-directory format
for downstream geometric analysis.
"""

__version__ = "0.1.0"

from .benchmarks import Sample, load_samples
from .dumpwriter import write_layer_file, write_manifest
from .hooks import KeyCapture, attach_key_hooks, find_key_projections
from .labeling import image_token_count, label_tokens
from .runner import ExtractionConfig, ExtractionSummary, run_extraction

__all__ = [
    "__version__",
    "Sample",
    "load_samples",
    "write_layer_file",
    "write_manifest",
    "KeyCapture",
    "attach_key_hooks",
    "find_key_projections",
    "image_token_count",
    "label_tokens",
    "ExtractionConfig",
    "ExtractionSummary",
    "run_extraction",
]
