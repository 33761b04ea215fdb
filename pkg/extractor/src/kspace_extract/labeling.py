"""Per-token modality codes for an encoded prompt.

Code 0 = text, 1 = image (the expanded image placeholder positions),
2 = other (BOS/EOS/pad and any remaining special tokens). Every position
gets exactly one code; downstream analyses drop code 2.
"""

from __future__ import annotations

import numpy as np

from .dumpwriter import LABEL_IMAGE, LABEL_OTHER, LABEL_TEXT
from .errors import LabelingError


def label_tokens(
    input_ids: np.ndarray,
    image_token_id: int | None,
    special_ids: set[int] | frozenset[int] = frozenset(),
) -> np.ndarray:
    """Modality code per sequence position.

    ``special_ids`` should hold the tokenizer's special ids; the image token
    id is treated as image (1) even if it is also marked special.
    """
    ids = np.asarray(input_ids)
    if ids.ndim != 1:
        raise LabelingError(f"input_ids must be 1-D, got shape {ids.shape}")
    labels = np.full(ids.shape[0], LABEL_TEXT, dtype=np.uint8)
    if special_ids:
        labels[np.isin(ids, sorted(special_ids))] = LABEL_OTHER
    if image_token_id is not None:
        labels[ids == image_token_id] = LABEL_IMAGE
    return labels


def image_token_count(input_ids: np.ndarray, image_token_id: int | None) -> int:
    if image_token_id is None:
        return 0
    return int(np.count_nonzero(np.asarray(input_ids) == image_token_id))
