"""Aggregation of raw cross-attention stacks into one per-region subject map.

For every (timestep, layer) entry that survives the filters: slice the
subject-token channels, average them, average over heads, bicubically
resize to the pixel-space region, then take the arithmetic mean over all
surviving entries and min-max normalize to [0, 1]. Accumulation happens in
float64 regardless of the stack dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bicubic
from .backend import AttentionStack, TokenMap, resolution_denominator
from .errors import MosaicError
from .geometry import Region

LAYER_FILTERS = (32, 16, 8)  # max resolution class included, as a denominator


class EmptySelection(MosaicError):
    """The layer/step filters exclude every stack entry."""


class SubjectMissing(MosaicError):
    """No subject token indices are available for the region."""


@dataclass(frozen=True)
class AggregationConfig:
    """Which attention entries participate in the aggregate.

    ``layer_filter`` is the finest resolution class included (a layer at
    1/16 of the region is included when the filter is 16 or 8);
    ``step_filter`` is the highest timestep ordinal included, None meaning
    all steps. The resize kernel is fixed to bicubic Catmull-Rom.
    """

    layer_filter: int = 8
    step_filter: int | None = None

    def __post_init__(self):
        if self.layer_filter not in LAYER_FILTERS:
            raise ValueError(f"layer_filter must be one of {LAYER_FILTERS}, "
                             f"got {self.layer_filter}")
        if self.step_filter is not None and self.step_filter < 1:
            raise ValueError(f"step_filter must be >= 1 or None, got {self.step_filter}")

    def includes(self, t: int, layer_id: str) -> bool:
        if self.step_filter is not None and t > self.step_filter:
            return False
        return resolution_denominator(layer_id) >= self.layer_filter


@dataclass
class AggregatedMap:
    """Min-max normalized subject map over one pixel-space region."""

    region_index: int
    values: np.ndarray  # (Hr, Wr) float64 in [0, 1]
    degenerate: bool = False


def aggregate(stack: AttentionStack, token_map: TokenMap, region: Region,
              cfg: AggregationConfig | None = None) -> AggregatedMap:
    cfg = cfg or AggregationConfig()
    subject = token_map.subject_token_indices[stack.region_index - 1]
    if not subject:
        raise SubjectMissing(f"region {stack.region_index} has no subject tokens")
    token_count = len(token_map.tokens[stack.region_index - 1])
    if any(not (0 <= i < token_count) for i in subject):
        raise SubjectMissing(
            f"region {stack.region_index} subject indices {subject} outside "
            f"{token_count} tokens")

    keys = sorted(key for key in stack.entries if cfg.includes(*key))
    if not keys:
        raise EmptySelection(
            f"region {stack.region_index}: filters (layer<=1/{cfg.layer_filter}, "
            f"step<={cfg.step_filter}) exclude all {len(stack.entries)} entries")

    acc = np.zeros((region.h, region.w), dtype=np.float64)
    for key in keys:
        tensor = stack.entries[key].astype(np.float64)
        # mean over subject sub-token channels, then over heads
        subject_map = tensor[..., list(subject)].mean(axis=-1).mean(axis=0)
        acc += bicubic.resize(subject_map, region.h, region.w)
    acc /= len(keys)

    lo, hi = float(acc.min()), float(acc.max())
    if hi - lo <= 0.0:
        return AggregatedMap(region_index=stack.region_index,
                             values=np.zeros_like(acc), degenerate=True)
    values = (acc - lo) / (hi - lo)
    return AggregatedMap(region_index=stack.region_index, values=values)
