"""Generation backend contract and ingest validation.

A backend turns a GenerationRequest into a GenerationResult: one RGB canvas
plus, per region, the raw cross-attention tensors keyed by (timestep,
layer). Attention tensors have shape (heads, h, w, tokens) with softmax
rows; nothing from a backend is trusted until validate_result has checked
row sums and shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Protocol

import numpy as np

from .errors import BackendFailure, MosaicError
from .geometry import CanvasPlan
from .catalog import PromptSpec

ROW_SUM_TOLERANCE = 1e-3
RESOLUTION_CLASSES = (8, 16, 32)  # denominators: attention size = region / denom


class ShapeMismatch(MosaicError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    plan: CanvasPlan
    prompts: tuple[PromptSpec, ...]
    seed: int
    steps: int = 50
    guidance_scale: float = 7.5
    scheduler_id: str = "lms"

    def __post_init__(self):
        if len(self.prompts) != len(self.plan.regions):
            raise ValueError(
                f"{len(self.prompts)} prompts for {len(self.plan.regions)} regions")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance_scale <= 0:
            raise ValueError(f"guidance_scale must be positive, got {self.guidance_scale}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class TokenMap:
    """Token strings per region plus the ordinals covering the category name."""

    tokens: tuple[tuple[str, ...], ...]
    subject_token_indices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for toks, subject in zip(self.tokens, self.subject_token_indices):
            if not subject:
                raise ValueError("subject token indices must be non-empty")
            if any(not (0 <= i < len(toks)) for i in subject):
                raise ValueError("subject token index outside token count")


@dataclass
class AttentionStack:
    """Raw cross-attention for one region: (t, layer_id) -> (n, h, w, l)."""

    region_index: int
    entries: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)

    def timesteps(self) -> list[int]:
        return sorted({t for t, _ in self.entries})

    def layer_ids(self) -> list[str]:
        return sorted({layer for _, layer in self.entries})


@dataclass
class GenerationResult:
    image: np.ndarray  # (H, W, 3) uint8
    stacks: list[AttentionStack]
    token_map: TokenMap
    backend_id: str
    request: GenerationRequest


class Backend(Protocol):
    backend_id: str

    def generate(self, request: GenerationRequest) -> GenerationResult: ...


def resolution_denominator(layer_id: str) -> int:
    """Layer ids carry their resolution class as a trailing ``-{denom}``."""
    try:
        denom = int(layer_id.rsplit("-", 1)[1])
    except (IndexError, ValueError):
        raise ShapeMismatch(f"layer id {layer_id!r} does not end in a resolution class")
    if denom not in RESOLUTION_CLASSES:
        raise ShapeMismatch(f"layer id {layer_id!r} has resolution 1/{denom}, "
                            f"expected one of {RESOLUTION_CLASSES}")
    return denom


def attention_grid(latent_h: int, latent_w: int, denom: int) -> tuple[int, int]:
    """Attention map size for a resolution class; stride-2 stages round up."""
    h, w = latent_h, latent_w
    for _ in range(int(math.log2(denom // 8))):
        h = (h + 1) // 2
        w = (w + 1) // 2
    return h, w


def validate_result(result: GenerationResult) -> None:
    """Ingest checks applied to every backend's output."""
    plan = result.request.plan
    h, w = plan.spec.height, plan.spec.width
    if result.image.shape != (h, w, 3) or result.image.dtype != np.uint8:
        raise ShapeMismatch(
            f"image shape {result.image.shape} dtype {result.image.dtype}, "
            f"expected ({h}, {w}, 3) uint8")
    if len(result.stacks) != len(plan.regions):
        raise ShapeMismatch(f"{len(result.stacks)} stacks for {len(plan.regions)} regions")
    if len(result.token_map.tokens) != len(plan.regions):
        raise ShapeMismatch("token map does not cover every region")

    for stack, latent in zip(result.stacks, plan.latent_regions):
        tokens = result.token_map.tokens[stack.region_index - 1]
        for (t, layer_id), tensor in stack.entries.items():
            denom = resolution_denominator(layer_id)
            eh, ew = attention_grid(latent.h, latent.w, denom)
            if tensor.ndim != 4 or tensor.shape[1:] != (eh, ew, len(tokens)):
                raise ShapeMismatch(
                    f"region {stack.region_index} t={t} layer={layer_id}: "
                    f"shape {tensor.shape}, expected (n, {eh}, {ew}, {len(tokens)})")
            sums = tensor.astype(np.float64).sum(axis=-1)
            err = np.abs(sums - 1.0).max()
            if err > ROW_SUM_TOLERANCE:
                raise ShapeMismatch(
                    f"region {stack.region_index} t={t} layer={layer_id}: "
                    f"attention rows deviate from 1 by {err:.2e}")


def generate(request: GenerationRequest, backend: Backend) -> GenerationResult:
    """Run a backend and validate its output before anything downstream sees it."""
    try:
        result = backend.generate(request)
    except BackendFailure:
        raise
    except Exception as exc:
        raise BackendFailure(getattr(backend, "backend_id", "unknown"), str(exc), exc) from exc
    validate_result(result)
    return result


def iter_mfat_results(directory) -> Iterator[GenerationResult]:
    """Yield validated results from a directory of MFAT files, sorted by name."""
    from pathlib import Path

    from . import mfat

    root = Path(directory)
    if not root.is_dir():
        raise BackendFailure("mfat_dir", f"not a directory: {root}")
    paths = sorted(root.glob("*.mfat"))
    if not paths:
        raise BackendFailure("mfat_dir", f"no .mfat files under {root}")
    for path in paths:
        result = mfat.read_mfat(path)
        validate_result(result)
        yield result
