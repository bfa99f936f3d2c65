"""Dataset assembly: COCO-style annotations, mask metrics, run statistics.

Masks are stored as COCO-compatible uncompressed RLE: column-major run
counts alternating background/foreground, starting with a (possibly zero)
background run. Emission is byte-deterministic: fixed key order, LF line
endings, no timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .catalog import Category
from .errors import FormatError, MosaicError
from .geometry import CanvasPlan
from .masks import InstanceMask


class RleOverrun(FormatError):
    """RLE counts do not tile the grid exactly."""


class ValidationError(MosaicError):
    """A record violates a dataset invariant. Carries the record id."""


class LengthMismatch(MosaicError):
    pass


# ---------------------------------------------------------------------------
# run-length encoding


def encode_rle(mask: np.ndarray) -> dict:
    """Column-major uncompressed RLE; counts start with a background run."""
    h, w = mask.shape
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        raise ValueError("mask must be non-empty")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(boundaries).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}


def decode_rle(segmentation: dict, dims: tuple[int, int] | None = None) -> np.ndarray:
    h, w = dims if dims is not None else segmentation["size"]
    if h <= 0 or w <= 0:
        raise ValueError("dims must be positive")
    counts = segmentation["counts"]
    total = sum(counts)
    if total > h * w:
        raise RleOverrun(f"counts cover {total} cells, grid has {h * w}")
    if total != h * w:
        raise RleOverrun(f"counts cover {total} cells, grid needs {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        if count < 0:
            raise RleOverrun(f"negative run count {count}")
        if value:
            flat[pos:pos + count] = True
        pos += count
        value = not value
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# records


@dataclass
class Annotation:
    annotation_id: int
    image_id: int
    category_id: int
    bbox: tuple[int, int, int, int]
    segmentation: dict
    area: int
    provenance: dict = field(default_factory=dict)


@dataclass
class DatasetRecord:
    image_id: int
    file_path: str
    width: int
    height: int
    annotations: list[Annotation]
    metadata: dict = field(default_factory=dict)


def annotation_from_mask(mask: InstanceMask, annotation_id: int,
                         image_id: int) -> Annotation:
    return Annotation(
        annotation_id=annotation_id,
        image_id=image_id,
        category_id=mask.category_id,
        bbox=mask.bbox,
        segmentation=encode_rle(mask.values),
        area=mask.area,
        provenance={
            "region_index": mask.region_index,
            "threshold_used": mask.provenance.threshold_used,
            "component_count_before_filter": mask.provenance.component_count_before_filter,
            "area_fraction": mask.provenance.area_fraction,
            "refiner": mask.provenance.refiner,
        },
    )


def validate_record(record: DatasetRecord, categories: list[Category]) -> None:
    known = {c.id for c in categories}
    for ann in record.annotations:
        rid = f"record {record.image_id} annotation {ann.annotation_id}"
        if ann.image_id != record.image_id:
            raise ValidationError(f"{rid}: image id {ann.image_id} != record id")
        if ann.category_id not in known:
            raise ValidationError(f"{rid}: unknown category id {ann.category_id}")
        mask = decode_rle(ann.segmentation)
        if mask.shape != (record.height, record.width):
            raise ValidationError(f"{rid}: segmentation dims {mask.shape} != canvas")
        area = int(mask.sum())
        if area != ann.area:
            raise ValidationError(f"{rid}: stored area {ann.area} != decoded {area}")
        ys, xs = np.nonzero(mask)
        if len(xs) == 0:
            tight = (0, 0, 0, 0)
        else:
            tight = (int(xs.min()), int(ys.min()),
                     int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        if tight != tuple(ann.bbox):
            raise ValidationError(f"{rid}: stored bbox {ann.bbox} != tight {tight}")


def emit(records: list[DatasetRecord], categories: list[Category], sink: IO[str]) -> None:
    """Write the COCO-style document; identical inputs yield identical bytes."""
    for record in records:
        validate_record(record, categories)
    doc = {
        "images": [
            {
                "id": r.image_id,
                "file_name": r.file_path,
                "width": r.width,
                "height": r.height,
                "metadata": r.metadata,
            }
            for r in records
        ],
        "annotations": [
            {
                "id": a.annotation_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.bbox),
                "segmentation": a.segmentation,
                "area": a.area,
                "iscrowd": 0,
                "provenance": a.provenance,
            }
            for r in records
            for a in r.annotations
        ],
        "categories": [
            {"id": c.id, "name": c.name, "definition": c.definition, "bucket": c.bucket}
            for c in categories
        ],
    }
    json.dump(doc, sink, indent=2, sort_keys=True)
    sink.write("\n")


def load_coco(source: IO[str]) -> tuple[list[DatasetRecord], list[Category]]:
    """Parse an emitted document back into records (round-trip for tests)."""
    doc = json.load(source)
    categories = [Category(id=c["id"], name=c["name"], definition=c["definition"],
                           bucket=c["bucket"]) for c in doc["categories"]]
    by_image: dict[int, list[Annotation]] = {img["id"]: [] for img in doc["images"]}
    for a in doc["annotations"]:
        by_image[a["image_id"]].append(Annotation(
            annotation_id=a["id"], image_id=a["image_id"], category_id=a["category_id"],
            bbox=tuple(a["bbox"]), segmentation=a["segmentation"], area=a["area"],
            provenance=a.get("provenance", {}),
        ))
    records = [
        DatasetRecord(
            image_id=img["id"], file_path=img["file_name"], width=img["width"],
            height=img["height"], annotations=by_image[img["id"]],
            metadata=img.get("metadata", {}),
        )
        for img in doc["images"]
    ]
    return records, categories


def record_to_dict(record: DatasetRecord) -> dict:
    return {
        "image_id": record.image_id,
        "file_path": record.file_path,
        "width": record.width,
        "height": record.height,
        "annotations": [
            {
                "annotation_id": a.annotation_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.bbox),
                "segmentation": a.segmentation,
                "area": a.area,
                "provenance": a.provenance,
            }
            for a in record.annotations
        ],
        "metadata": record.metadata,
    }


def record_from_dict(d: dict) -> DatasetRecord:
    return DatasetRecord(
        image_id=d["image_id"],
        file_path=d["file_path"],
        width=d["width"],
        height=d["height"],
        annotations=[
            Annotation(
                annotation_id=a["annotation_id"],
                image_id=a["image_id"],
                category_id=a["category_id"],
                bbox=tuple(a["bbox"]),
                segmentation=a["segmentation"],
                area=a["area"],
                provenance=a.get("provenance", {}),
            )
            for a in d["annotations"]
        ],
        metadata=d.get("metadata", {}),
    )


# ---------------------------------------------------------------------------
# metrics


def miou(masks: list[np.ndarray], references: list[np.ndarray]) -> float:
    """Mean IoU over aligned mask pairs; an empty-vs-empty pair scores 1."""
    if len(masks) != len(references):
        raise LengthMismatch(f"{len(masks)} masks vs {len(references)} references")
    if not masks:
        raise LengthMismatch("cannot average over zero pairs")
    scores = []
    for a, b in zip(masks, references):
        if a.shape != b.shape:
            raise LengthMismatch(f"mask dims {a.shape} != reference dims {b.shape}")
        a = a.astype(bool)
        b = b.astype(bool)
        union = int((a | b).sum())
        if union == 0:
            scores.append(1.0)
        else:
            scores.append(int((a & b).sum()) / union)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# referring expressions

_POSITION = {1: "top left", 2: "top right", 3: "bottom left", 4: "bottom right"}
# (horizontal neighbour, relation) and (vertical neighbour, relation) per region
_NEIGHBOURS = {
    1: ((2, "to the left of"), (3, "above")),
    2: ((1, "to the right of"), (4, "above")),
    3: ((4, "to the left of"), (1, "below")),
    4: ((3, "to the right of"), (2, "below")),
}


def referring_expressions(plan: CanvasPlan, category_names: list[str]) -> list[list[str]]:
    """Quadrant-template referring expressions, one list per object.

    Four templates for N=4 (bare name, position prefix, position suffix,
    neighbour relation); smaller canvases only support the bare name.
    """
    if len(category_names) != len(plan.regions):
        raise LengthMismatch(f"{len(category_names)} names for {len(plan.regions)} regions")
    if len(plan.regions) != 4:
        return [[name] for name in category_names]
    out = []
    for region, name in zip(plan.regions, category_names):
        pos = _POSITION[region.index]
        (h_idx, h_rel), (v_idx, v_rel) = _NEIGHBOURS[region.index]
        h_name = category_names[h_idx - 1]
        v_name = category_names[v_idx - 1]
        out.append([
            name,
            f"{pos} {name}",
            f"{name} on {pos}",
            f"the {name} {h_rel} the {h_name} and {v_rel} the {v_name}",
        ])
    return out


# ---------------------------------------------------------------------------
# run statistics


@dataclass
class RunStats:
    canvases_attempted: int = 0
    regions_attempted: int = 0
    masks_accepted: int = 0
    rejections: dict[str, int] = field(default_factory=dict)
    per_category_instances: dict[int, int] = field(default_factory=dict)
    empty_run: bool = False

    @property
    def discard_rate(self) -> float:
        if self.regions_attempted == 0:
            return 0.0
        return 1.0 - self.masks_accepted / self.regions_attempted

    def record_accept(self, category_id: int) -> None:
        self.regions_attempted += 1
        self.masks_accepted += 1
        self.per_category_instances[category_id] = \
            self.per_category_instances.get(category_id, 0) + 1

    def record_reject(self, reason: str) -> None:
        self.regions_attempted += 1
        self.rejections[reason] = self.rejections.get(reason, 0) + 1

    def merge(self, other: "RunStats") -> "RunStats":
        merged = RunStats(
            canvases_attempted=self.canvases_attempted + other.canvases_attempted,
            regions_attempted=self.regions_attempted + other.regions_attempted,
            masks_accepted=self.masks_accepted + other.masks_accepted,
            rejections=dict(self.rejections),
            per_category_instances=dict(self.per_category_instances),
        )
        for key, value in other.rejections.items():
            merged.rejections[key] = merged.rejections.get(key, 0) + value
        for key, value in other.per_category_instances.items():
            merged.per_category_instances[key] = \
                merged.per_category_instances.get(key, 0) + value
        merged.empty_run = merged.regions_attempted == 0
        return merged

    def finalize(self) -> "RunStats":
        self.empty_run = self.regions_attempted == 0
        consistent = self.masks_accepted + sum(self.rejections.values())
        if consistent != self.regions_attempted:
            raise ValidationError(
                f"stats inconsistent: {self.masks_accepted} accepted + "
                f"{sum(self.rejections.values())} rejected != {self.regions_attempted}")
        return self

    def to_dict(self) -> dict:
        return {
            "canvases_attempted": self.canvases_attempted,
            "regions_attempted": self.regions_attempted,
            "masks_accepted": self.masks_accepted,
            "rejections": {k: self.rejections[k] for k in sorted(self.rejections)},
            "per_category_instances": {
                str(k): self.per_category_instances[k]
                for k in sorted(self.per_category_instances)},
            "discard_rate": self.discard_rate,
            "empty_run": self.empty_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunStats":
        stats = cls(
            canvases_attempted=d["canvases_attempted"],
            regions_attempted=d["regions_attempted"],
            masks_accepted=d["masks_accepted"],
            rejections=dict(d["rejections"]),
            per_category_instances={int(k): v
                                    for k, v in d["per_category_instances"].items()},
            empty_run=d["empty_run"],
        )
        return stats
