"""Locate and hook the key-projection modules of a decoder.

The key projection is found by walking the module graph for Linear layers
whose qualified name ends with a known alias (k_proj, key_proj, wk, w_k,
key) inside an indexed layer list (``...layers.<n>...``, ``...h.<n>...`` or
``...blocks.<n>...``), skipping vision branches. The largest such group is
taken to be the text decoder trunk; its projection output is captured raw,
before any head-wise reshaping, so the stored width is the projection's
out_features (heads already aggregated).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import UnsupportedArchitectureError

KEY_PROJECTION_SUFFIXES = ("k_proj", "key_proj", "wk", "w_k", "key")
_VISION_MARKERS = ("vision", "visual", "image_encoder", "vit", "clip")
_LAYER_PATTERN = re.compile(r"\.(?:layers|h|blocks)\.(\d+)\.")


def find_key_projections(model: nn.Module) -> dict[int, nn.Linear]:
    """Map decoder layer index -> key-projection Linear module."""
    groups: dict[str, dict[int, nn.Linear]] = {}
    for name, module in model.named_modules():
        if not isinstance(module, nn.Linear):
            continue
        lowered = name.lower()
        if not lowered.endswith(KEY_PROJECTION_SUFFIXES):
            continue
        if any(marker in lowered for marker in _VISION_MARKERS):
            continue
        match = _LAYER_PATTERN.search(name)
        if match is None:
            continue
        trunk = name[: match.start()]
        groups.setdefault(trunk, {})[int(match.group(1))] = module
    if not groups:
        raise UnsupportedArchitectureError(
            "no decoder key projection found; searched Linear modules named "
            f"*.{{{', '.join(KEY_PROJECTION_SUFFIXES)}}} inside indexed layer "
            f"lists, excluding {_VISION_MARKERS} branches, in "
            f"{type(model).__name__}"
        )
    trunk = max(groups, key=lambda t: len(groups[t]))
    return groups[trunk]


@dataclass
class KeyCapture:
    """Forward hooks on selected layers, recording prefill key outputs.

    Only outputs whose sequence length matches the length announced via
    ``begin_sample`` are kept, so incremental decode steps (length-1
    forwards) are excluded. Call ``detach`` to remove the hooks; afterwards
    nothing is captured.
    """

    projections: dict[int, nn.Linear]
    expected_len: int | None = None
    captured: dict[int, torch.Tensor] = field(default_factory=dict)
    _handles: list = field(default_factory=list)

    def __post_init__(self) -> None:
        for layer_index, module in self.projections.items():
            self._handles.append(
                module.register_forward_hook(self._make_hook(layer_index))
            )

    def _make_hook(self, layer_index: int):
        def hook(module, args, output):
            if self.expected_len is None:
                return
            out = output[0] if isinstance(output, tuple) else output
            if out.ndim == 3 and out.shape[1] == self.expected_len:
                # (batch, seq, width) -> (seq, width); batch is always 1 here
                self.captured[layer_index] = out.detach()[0].to(torch.float32).cpu()
            elif out.ndim == 2 and out.shape[0] == self.expected_len:
                self.captured[layer_index] = out.detach().to(torch.float32).cpu()

        return hook

    def begin_sample(self, expected_len: int) -> None:
        self.expected_len = expected_len
        self.captured = {}

    def detach(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles = []
        self.expected_len = None


def attach_key_hooks(model: nn.Module, layer_indices: list[int]) -> KeyCapture:
    """Hook the key projections of the listed decoder layers.

    Raises UnsupportedArchitectureError when no key projection exists and
    ValueError when a requested index is outside the decoder depth.
    """
    projections = find_key_projections(model)
    missing = sorted(set(layer_indices) - set(projections))
    if missing:
        raise ValueError(
            f"layer index(es) {missing} out of range; decoder has layers "
            f"{sorted(projections)}"
        )
    return KeyCapture({idx: projections[idx] for idx in layer_indices})


def key_projection_width(model: nn.Module, layer_index: int) -> int:
    """out_features of one decoder layer's key projection."""
    return find_key_projections(model)[layer_index].out_features
