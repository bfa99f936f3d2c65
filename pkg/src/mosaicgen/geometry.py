"""Mosaic canvas planning.

A canvas of W x H pixels is divided into N overlapped regions around a
jittered center. All pixel coordinates are kept divisible by the latent
factor U so the latent-space mapping is exact integer division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MosaicError

SUPPORTED_OBJECT_COUNTS = (1, 2, 4)

# tolerance for float comparisons against sigma*W style bounds
_EPS = 1e-9


class InvalidSpec(MosaicError):
    """CanvasSpec violates one of its invariants."""


class InvalidCenter(MosaicError):
    """A mosaic center does not satisfy containment/divisibility for its spec."""


class NotDivisible(MosaicError):
    """A pixel coordinate is not divisible by the latent factor."""


@dataclass(frozen=True)
class CanvasSpec:
    """Static geometry of one canvas: size, object count, jitter and overlaps.

    Overlaps must be divisible by 2*U so half-overlaps survive the latent
    division exactly; width/height must be divisible by U.
    """

    width: int
    height: int
    object_count: int = 4
    jitter_ratio: float = 0.375
    overlap_x: int = 64
    overlap_y: int = 48
    latent_factor: int = 8

    def __post_init__(self):
        w, h, n, u = self.width, self.height, self.object_count, self.latent_factor
        if u < 1:
            raise InvalidSpec(f"latent_factor must be a positive integer, got {u}")
        if w <= 0 or h <= 0:
            raise InvalidSpec(f"canvas dimensions must be positive, got {w}x{h}")
        if w % u != 0 or h % u != 0:
            raise InvalidSpec(f"canvas {w}x{h} not divisible by latent factor {u}")
        if n not in SUPPORTED_OBJECT_COUNTS:
            raise InvalidSpec(f"object_count must be one of {SUPPORTED_OBJECT_COUNTS}, got {n}")
        if not (0.0 < self.jitter_ratio <= 0.5):
            raise InvalidSpec(f"jitter_ratio must lie in (0, 0.5], got {self.jitter_ratio}")
        for name, delta in (("overlap_x", self.overlap_x), ("overlap_y", self.overlap_y)):
            if delta < 0:
                raise InvalidSpec(f"{name} must be non-negative, got {delta}")
            if delta % (2 * u) != 0:
                raise InvalidSpec(f"{name}={delta} not divisible by 2*U={2 * u}")
        # an overlap wider than the smallest admissible quadrant side would
        # push region corners outside the canvas for extreme centers
        if self.overlap_x > self.jitter_ratio * w + _EPS:
            raise InvalidSpec(
                f"overlap_x={self.overlap_x} exceeds the smallest quadrant width "
                f"{self.jitter_ratio * w:g}"
            )
        if self.overlap_y > self.jitter_ratio * h + _EPS:
            raise InvalidSpec(
                f"overlap_y={self.overlap_y} exceeds the smallest quadrant height "
                f"{self.jitter_ratio * h:g}"
            )
        if self.center_grid(axis="x")[0] > self.center_grid(axis="x")[1]:
            raise InvalidSpec("no multiple of U inside the admissible x jitter interval")
        if self.center_grid(axis="y")[0] > self.center_grid(axis="y")[1]:
            raise InvalidSpec("no multiple of U inside the admissible y jitter interval")

    def center_grid(self, axis: str) -> tuple[int, int]:
        """Lowest and highest multiple of U inside the admissible jitter interval."""
        size = self.width if axis == "x" else self.height
        u = self.latent_factor
        lo = self.jitter_ratio * size
        hi = (1.0 - self.jitter_ratio) * size
        lo_n = math.ceil(lo / u - _EPS)
        hi_n = math.floor(hi / u + _EPS)
        return lo_n * u, hi_n * u


@dataclass(frozen=True)
class MosaicCenter:
    x: int
    y: int


@dataclass(frozen=True)
class Region:
    """A pixel-space rectangle [x, x+w) x [y, y+h); index is 1-based."""

    x: int
    y: int
    w: int
    h: int
    index: int

    def contains_point(self, px: int, py: int) -> bool:
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h


@dataclass(frozen=True)
class LatentRegion:
    """A region divided by U. Multiplying every field by U reproduces the parent."""

    x: int
    y: int
    w: int
    h: int
    index: int


@dataclass(frozen=True)
class CanvasPlan:
    spec: CanvasSpec
    center: MosaicCenter
    regions: tuple[Region, ...]
    latent_regions: tuple[LatentRegion, ...] = field(default_factory=tuple)
    split_axis: str | None = None  # only meaningful for N=2


def _snap_half_down(value: float, u: int) -> int:
    """Nearest multiple of u; exact halves round toward the lower multiple."""
    return int(math.ceil(value / u - 0.5)) * u


def jitter_center(spec: CanvasSpec, rng: np.random.Generator) -> MosaicCenter:
    """Draw the mosaic center uniformly from the admissible rectangle.

    The draw is snapped to the nearest multiple of U (ties round down) and
    clamped onto the admissible U-grid so containment always holds.
    """
    u = spec.latent_factor
    coords = []
    for axis, size in (("x", spec.width), ("y", spec.height)):
        lo = spec.jitter_ratio * size
        hi = (1.0 - spec.jitter_ratio) * size
        raw = rng.uniform(lo, hi)
        snapped = _snap_half_down(raw, u)
        grid_lo, grid_hi = spec.center_grid(axis)
        coords.append(min(max(snapped, grid_lo), grid_hi))
    return MosaicCenter(x=coords[0], y=coords[1])


def _check_center(spec: CanvasSpec, center: MosaicCenter) -> None:
    u = spec.latent_factor
    if center.x % u != 0 or center.y % u != 0:
        raise InvalidCenter(f"center {center} not divisible by U={u}")
    if not (spec.jitter_ratio * spec.width - _EPS <= center.x
            <= (1 - spec.jitter_ratio) * spec.width + _EPS):
        raise InvalidCenter(f"center x={center.x} outside admissible interval")
    if not (spec.jitter_ratio * spec.height - _EPS <= center.y
            <= (1 - spec.jitter_ratio) * spec.height + _EPS):
        raise InvalidCenter(f"center y={center.y} outside admissible interval")


def plan_regions(spec: CanvasSpec, center: MosaicCenter,
                 rng: np.random.Generator | None = None) -> CanvasPlan:
    """Derive the N overlapped regions around the center.

    N=4 uses the four closed-form corner regions with half-overlaps on each
    side of the center; N=2 splits along a cut axis chosen uniformly by
    ``rng`` ("vertical" cut = side-by-side regions, "horizontal" = stacked);
    N=1 is the full canvas.
    """
    _check_center(spec, center)
    w, h = spec.width, spec.height
    x, y = center.x, center.y
    hx, hy = spec.overlap_x // 2, spec.overlap_y // 2
    split_axis = None

    if spec.object_count == 1:
        regions = (Region(0, 0, w, h, 1),)
    elif spec.object_count == 2:
        if rng is None:
            raise ValueError("N=2 requires an rng to choose the split axis")
        split_axis = "vertical" if rng.integers(0, 2) == 0 else "horizontal"
        if split_axis == "vertical":
            regions = (
                Region(0, 0, x + hx, h, 1),
                Region(x - hx, 0, w - x + hx, h, 2),
            )
        else:
            regions = (
                Region(0, 0, w, y + hy, 1),
                Region(0, y - hy, w, h - y + hy, 2),
            )
    else:
        regions = (
            Region(0, 0, x + hx, y + hy, 1),
            Region(x - hx, 0, w - x + hx, y + hy, 2),
            Region(0, y - hy, x + hx, h - y + hy, 3),
            Region(x - hx, y - hy, w - x + hx, h - y + hy, 4),
        )

    for r in regions:
        if r.x < 0 or r.y < 0 or r.x + r.w > w or r.y + r.h > h:
            raise InvalidCenter(f"region {r} falls outside the canvas")
    plan = CanvasPlan(spec=spec, center=center, regions=regions, split_axis=split_axis)
    return to_latent(plan)


def to_latent(plan: CanvasPlan) -> CanvasPlan:
    """Fill in the latent-space regions by exact integer division by U."""
    u = plan.spec.latent_factor
    latents = []
    for r in plan.regions:
        for name, v in (("x", r.x), ("y", r.y), ("w", r.w), ("h", r.h)):
            if v % u != 0:
                raise NotDivisible(f"region {r.index} {name}={v} not divisible by U={u}")
        latents.append(LatentRegion(r.x // u, r.y // u, r.w // u, r.h // u, r.index))
    return replace(plan, latent_regions=tuple(latents))


def coverage_holds(plan: CanvasPlan) -> bool:
    """True iff the union of regions covers every canvas pixel.

    Interval arithmetic on the region layout; no pixel enumeration needed.
    """
    w, h = plan.spec.width, plan.spec.height
    covered = np.zeros((h, w), dtype=bool) if w * h <= 1 << 20 else None
    if covered is not None:
        for r in plan.regions:
            covered[r.y:r.y + r.h, r.x:r.x + r.w] = True
        return bool(covered.all())
    # large canvases: check the 1-D projections per row/column band
    xs = sorted({r.x for r in plan.regions} | {r.x + r.w for r in plan.regions} | {0, w})
    ys = sorted({r.y for r in plan.regions} | {r.y + r.h for r in plan.regions} | {0, h})
    for yi in range(len(ys) - 1):
        for xi in range(len(xs) - 1):
            px, py = xs[xi], ys[yi]
            if not any(r.contains_point(px, py) for r in plan.regions):
                return False
    return True


def plan_to_dict(plan: CanvasPlan) -> dict:
    """JSON-compatible plan representation (also used in the MFAT header)."""
    s = plan.spec
    return {
        "canvas": {
            "width": s.width, "height": s.height, "object_count": s.object_count,
            "jitter_ratio": s.jitter_ratio, "overlap_x": s.overlap_x,
            "overlap_y": s.overlap_y, "latent_factor": s.latent_factor,
        },
        "center": [plan.center.x, plan.center.y],
        "split_axis": plan.split_axis,
        "regions": [
            {"index": r.index, "x": r.x, "y": r.y, "w": r.w, "h": r.h}
            for r in plan.regions
        ],
        "latent_regions": [
            {"index": r.index, "x": r.x, "y": r.y, "w": r.w, "h": r.h}
            for r in plan.latent_regions
        ],
    }


def plan_from_dict(d: dict) -> CanvasPlan:
    spec = CanvasSpec(**d["canvas"])
    center = MosaicCenter(x=d["center"][0], y=d["center"][1])
    regions = tuple(Region(r["x"], r["y"], r["w"], r["h"], r["index"]) for r in d["regions"])
    plan = CanvasPlan(spec=spec, center=center, regions=regions,
                      split_axis=d.get("split_axis"))
    return to_latent(plan)
