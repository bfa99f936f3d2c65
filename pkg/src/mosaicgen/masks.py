"""From aggregated attention map to full-canvas instance mask.

Otsu threshold -> bilateral-solver refinement -> connected components ->
area/count filters -> padding to canvas size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import bilateral
from .attention import AggregatedMap
from .bilateral import BilateralParams
from .errors import MosaicError
from .geometry import CanvasSpec, Region

N_BINS = 256

REJECT_TOO_SMALL = "TooSmall"
REJECT_TOO_LARGE = "TooLarge"
REJECT_FRAGMENTED = "Fragmented"


class DegenerateMap(MosaicError):
    """A constant map cannot be thresholded."""


@dataclass
class RegionMask:
    values: np.ndarray  # (Hr, Wr) bool
    threshold_used: float
    stage: str  # "coarse" | "refined"


@dataclass(frozen=True)
class FilterPolicy:
    min_area_fraction: float = 0.05
    max_area_fraction: float = 0.95
    max_components: int = 1
    connectivity: int = 8

    def __post_init__(self):
        if not (0.0 < self.min_area_fraction < self.max_area_fraction < 1.0):
            raise ValueError("need 0 < min_area_fraction < max_area_fraction < 1")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass
class ComponentLabels:
    labels: np.ndarray  # (H, W) int32, 0 = background
    count: int
    areas: list[int]  # areas[k] is the area of label k+1


@dataclass
class MaskProvenance:
    threshold_used: float
    component_count_before_filter: int
    area_fraction: float
    refiner: str = "bilateral_solver"  # slot for an external refiner tag


@dataclass
class InstanceMask:
    values: np.ndarray  # (H, W) bool, full canvas
    bbox: tuple[int, int, int, int]  # tight (x, y, w, h)
    area: int
    category_id: int
    region_index: int
    provenance: MaskProvenance


def otsu(agg: AggregatedMap) -> tuple[float, RegionMask]:
    """Threshold maximizing between-class variance over 256 equal bins.

    The comparison runs in exact integer arithmetic; ties break toward the
    lower threshold. The mask is (value > threshold), which puts the bin
    containing the threshold in the background.
    """
    if agg.degenerate:
        raise DegenerateMap(f"region {agg.region_index} map is constant")
    values = agg.values
    bins = np.clip((values * N_BINS).astype(np.int64), 0, N_BINS - 1)
    hist = np.bincount(bins.ravel(), minlength=N_BINS)
    if int((hist > 0).sum()) < 2:
        raise DegenerateMap(f"region {agg.region_index} map occupies a single bin")

    total = int(hist.sum())
    total_first_moment = int((hist * np.arange(N_BINS)).sum())

    # maximize (w1*s0 - w0*s1)^2 / (w0*w1) with exact cross-multiplication
    best_k, best_num, best_den = -1, -1, 1
    w0 = 0
    s0 = 0
    for k in range(N_BINS):
        w0 += int(hist[k])
        s0 += int(hist[k]) * k
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        s1 = total_first_moment - s0
        num = (w1 * s0 - w0 * s1) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    threshold = (best_k + 1) / N_BINS
    mask = values > threshold
    return threshold, RegionMask(values=mask, threshold_used=threshold, stage="coarse")


def _row_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) runs of set pixels in one row."""
    padded = np.concatenate([[0], row.view(np.uint8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def components(mask: np.ndarray, connectivity: int = 8) -> ComponentLabels:
    """Label connected components of set pixels; labels are 1..K.

    Run-based two-pass labeling: runs of set pixels per row are merged with
    union-find across adjacent rows. Labels are numbered by first
    appearance in row-major order.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.ascontiguousarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)

    runs: list[tuple[int, int, int]] = []  # (row, start, end)
    row_spans: list[list[int]] = []  # run ids per row
    for y in range(h):
        ids = []
        for start, end in _row_runs(mask[y]):
            ids.append(len(runs))
            runs.append((y, int(start), int(end)))
        row_spans.append(ids)

    uf = _UnionFind(len(runs))
    reach = 0 if connectivity == 4 else 1
    for y in range(1, h):
        above = row_spans[y - 1]
        here = row_spans[y]
        ai = 0
        for run_id in here:
            _, s, e = runs[run_id]
            while ai < len(above) and runs[above[ai]][2] + reach <= s:
                ai += 1
            aj = ai
            while aj < len(above) and runs[above[aj]][1] < e + reach:
                uf.union(run_id, above[aj])
                aj += 1
            if aj > ai:
                aj -= 1  # last overlapping run may also touch the next run here
            ai = aj

    label_of_root: dict[int, int] = {}
    areas: list[int] = []
    for run_id, (y, s, e) in enumerate(runs):
        root = uf.find(run_id)
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root) + 1
            areas.append(0)
        label = label_of_root[root]
        labels[y, s:e] = label
        areas[label - 1] += e - s
    return ComponentLabels(labels=labels, count=len(areas), areas=areas)


@dataclass
class FilterOutcome:
    accepted: RegionMask | None
    reason: str | None
    area_fraction: float
    component_count: int

    @property
    def is_accepted(self) -> bool:
        return self.accepted is not None


def filter_mask(mask: RegionMask, comps: ComponentLabels, policy: FilterPolicy,
                region: Region) -> FilterOutcome:
    """Accept iff the area fraction lies strictly inside (min, max) and the
    component count does not exceed the policy. Rejection is a value."""
    area = int(sum(comps.areas))
    fraction = area / (region.w * region.h)
    if fraction <= policy.min_area_fraction:
        reason = REJECT_TOO_SMALL
    elif fraction >= policy.max_area_fraction:
        reason = REJECT_TOO_LARGE
    elif comps.count > policy.max_components:
        reason = REJECT_FRAGMENTED
    else:
        reason = None
    accepted = mask if reason is None else None
    return FilterOutcome(accepted=accepted, reason=reason,
                         area_fraction=fraction, component_count=comps.count)


def refine(coarse: RegionMask, image_region: np.ndarray,
           params: BilateralParams | None = None) -> RegionMask:
    """Snap the coarse mask to image edges with the bilateral solver.

    Confidence ramps with distance from the coarse boundary (floored inside
    the ambiguous band); the refined boundary is confined to a +-2*sigma
    band around the coarse one.
    """
    params = params or BilateralParams()
    mask = coarse.values
    if image_region.shape[:2] != mask.shape:
        raise ValueError(f"image {image_region.shape[:2]} vs mask {mask.shape}")
    if mask.all() or not mask.any():
        return RegionMask(values=mask.copy(), threshold_used=coarse.threshold_used,
                          stage="refined")

    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    boundary_distance = np.where(mask, inside, outside)
    band = 2.0 * params.spatial_sigma
    confidence = np.clip(boundary_distance / band, params.confidence_floor, 1.0)

    soft = bilateral.solve(image_region, mask.astype(np.float64),
                           confidence.astype(np.float64), params)
    refined = soft >= 0.5
    far = boundary_distance > band
    refined[far] = mask[far]
    return RegionMask(values=refined, threshold_used=coarse.threshold_used,
                      stage="refined")


def expand(accepted: RegionMask, region: Region, canvas: CanvasSpec,
           category_id: int, provenance: MaskProvenance) -> InstanceMask:
    """Pad the accepted region mask with zeros out to the full canvas."""
    full = np.zeros((canvas.height, canvas.width), dtype=bool)
    full[region.y:region.y + region.h, region.x:region.x + region.w] = accepted.values
    ys, xs = np.nonzero(full)
    if len(xs) == 0:
        bbox = (0, 0, 0, 0)
    else:
        bbox = (int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return InstanceMask(
        values=full,
        bbox=bbox,
        area=int(full.sum()),
        category_id=category_id,
        region_index=region.index,
        provenance=provenance,
    )
