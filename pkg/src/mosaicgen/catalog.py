"""Category catalogs and per-region prompt construction.

Catalog file format: UTF-8 text, one record per line,
``id<TAB>name<TAB>bucket<TAB>definition`` (definition may be empty).
Lines beginning with ``#`` are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import FormatError, MosaicError

BUCKETS = ("rare", "common", "frequent", "unknown")
TEMPLATES = ("name_only", "photo_single", "photo_single_def")
STRATEGIES = ("all_buckets", "rare_only")

# LVIS frequency letters -> bucket names
_LVIS_FREQUENCY = {"r": "rare", "c": "common", "f": "frequent"}


class ParseError(FormatError):
    """Catalog line failed to parse. Carries line number and field context."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DuplicateId(FormatError):
    pass


class EmptyStrategyPool(MosaicError):
    """The sampling strategy selects no categories."""


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    definition: str = ""
    bucket: str = "unknown"

    def __post_init__(self):
        if not self.name:
            raise ValueError("category name must be non-empty")
        if self.bucket not in BUCKETS:
            raise ValueError(f"bucket must be one of {BUCKETS}, got {self.bucket!r}")


@dataclass(frozen=True)
class PromptSpec:
    """A region prompt with the character span of the category name marked.

    ``text[subject_start:subject_end]`` equals the category name exactly;
    ``template_id`` records the template actually applied (it differs from
    the requested one when photo_single_def falls back on a missing
    definition).
    """

    text: str
    subject_start: int
    subject_end: int
    category_id: int
    template_id: str

    def __post_init__(self):
        if not (0 <= self.subject_start < self.subject_end <= len(self.text)):
            raise ValueError("subject span outside prompt text")

    @property
    def subject(self) -> str:
        return self.text[self.subject_start:self.subject_end]


def load_catalog(source: IO[bytes] | IO[str]) -> list[Category]:
    """Parse a catalog stream; order is preserved."""
    categories: list[Category] = []
    seen: dict[int, int] = {}
    saw_content = False
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        saw_content = True
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(line_no, f"expected 4 tab-separated fields, got {len(fields)}")
        id_text, name, bucket, definition = fields
        try:
            cat_id = int(id_text)
        except ValueError:
            raise ParseError(line_no, f"id field {id_text!r} is not an integer") from None
        if not name:
            raise ParseError(line_no, "name field is empty")
        if bucket not in BUCKETS:
            raise ParseError(line_no, f"bucket field {bucket!r} not one of {BUCKETS}")
        if cat_id in seen:
            raise DuplicateId(f"id {cat_id} on line {line_no} already used on line {seen[cat_id]}")
        seen[cat_id] = line_no
        categories.append(Category(id=cat_id, name=name, definition=definition, bucket=bucket))
    if not saw_content:
        raise ParseError(0, "catalog is empty")
    return categories


def save_catalog(categories: Iterable[Category], sink: IO[str]) -> None:
    for cat in categories:
        for field_name, value in (("name", cat.name), ("definition", cat.definition)):
            if "\t" in value or "\n" in value:
                raise ValueError(f"category {cat.id} {field_name} contains a tab or newline")
        sink.write(f"{cat.id}\t{cat.name}\t{cat.bucket}\t{cat.definition}\n")


def convert_lvis_categories(source: IO[bytes] | IO[str]) -> list[Category]:
    """Convert an LVIS-style annotation file (``categories`` array with
    id/name/def/frequency) into catalog records."""
    doc = json.load(source)
    entries = doc["categories"] if isinstance(doc, dict) else doc
    categories = []
    for entry in entries:
        bucket = _LVIS_FREQUENCY.get(entry.get("frequency", ""), "unknown")
        categories.append(Category(
            id=int(entry["id"]),
            name=str(entry["name"]),
            definition=str(entry.get("def", "")),
            bucket=bucket,
        ))
    return categories


def sample_categories(catalog: list[Category], n: int, strategy: str,
                      rng: np.random.Generator) -> list[Category]:
    """Draw ``n`` categories for one canvas.

    Draws without replacement when the strategy pool is large enough,
    otherwise falls back to replacement so every region still gets a prompt.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "rare_only":
        pool = [c for c in catalog if c.bucket == "rare"]
    else:
        pool = list(catalog)
    if not pool:
        raise EmptyStrategyPool(f"strategy {strategy!r} selects no categories")
    replace = len(pool) < n
    idx = rng.choice(len(pool), size=n, replace=replace)
    return [pool[i] for i in idx]


def build_prompt(category: Category, template_id: str) -> PromptSpec:
    """Expand the prompt template, marking the inserted category-name span."""
    if template_id not in TEMPLATES:
        raise ValueError(f"template_id must be one of {TEMPLATES}, got {template_id!r}")
    name = category.name
    if template_id == "photo_single_def" and not category.definition:
        template_id = "photo_single"  # fallback, recorded via template_id
    if template_id == "name_only":
        text, start = name, 0
    elif template_id == "photo_single":
        prefix = "a photo of a single "
        text, start = prefix + name, len(prefix)
    else:
        prefix = "a photo of a single "
        text = f"{prefix}{name}, {category.definition}"
        start = len(prefix)
    return PromptSpec(text=text, subject_start=start, subject_end=start + len(name),
                      category_id=category.id, template_id=template_id)
