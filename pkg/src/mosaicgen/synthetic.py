"""Deterministic synthetic backend.

Implants one elliptical object per region and emits cross-attention stacks
computed literally as row-wise softmax(Q K^T / sqrt(d)). Queries are built
so the subject token's logits are highest inside the ellipse and lowest
outside, with the edge sharpening as denoising progresses. The ellipse is
the ground truth the downstream mask pipeline is scored against.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .backend import (
    AttentionStack,
    GenerationRequest,
    GenerationResult,
    TokenMap,
    attention_grid,
    resolution_denominator,
    ShapeMismatch,
)
from .geometry import CanvasSpec, Region

DEFAULT_LAYERS = ("mid-32", "down0-16", "up0-16", "up1-8")

BOS, EOS = "<s>", "</s>"

_WORD = re.compile(r"[A-Za-z0-9_']+|[^\sA-Za-z0-9_']")


def tokenize(text: str) -> tuple[list[str], list[tuple[int, int] | None]]:
    """Whitespace/punctuation tokenizer with BOS/EOS markers.

    Returns token strings and their character spans (None for the markers).
    """
    tokens: list[str] = [BOS]
    spans: list[tuple[int, int] | None] = [None]
    for m in _WORD.finditer(text):
        tokens.append(m.group(0))
        spans.append((m.start(), m.end()))
    tokens.append(EOS)
    spans.append(None)
    return tokens, spans


def subject_indices(spans: list[tuple[int, int] | None], start: int, end: int) -> tuple[int, ...]:
    hits = tuple(i for i, span in enumerate(spans)
                 if span is not None and span[0] < end and start < span[1])
    if not hits:
        raise ValueError(f"no tokens overlap subject span [{start}, {end})")
    return hits


@dataclass(frozen=True)
class EllipseBlob:
    """Rotated ellipse in region pixel coordinates."""

    cx: float
    cy: float
    rx: float
    ry: float
    theta: float

    def phi(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Quadratic form; phi < 1 inside the ellipse."""
        dx = px - self.cx
        dy = py - self.cy
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = (dx * c + dy * s) / self.rx
        v = (-dx * s + dy * c) / self.ry
        return u * u + v * v

    def mask(self, width: int, height: int) -> np.ndarray:
        """Pixel-resolution boolean mask, evaluated at pixel centers."""
        ys, xs = np.mgrid[0:height, 0:width]
        return self.phi(xs + 0.5, ys + 0.5) < 1.0


@dataclass
class SyntheticSceneParams:
    """Everything needed to evaluate one region's attention at any (t, layer)."""

    blob: EllipseBlob
    keys: np.ndarray                  # (tokens, d)
    d: int
    subject_tokens: tuple[int, ...]
    subject_scales: np.ndarray        # per sub-token logit scale
    head_jitter: np.ndarray           # (heads, tokens) additive logit jitter
    region_size: tuple[int, int]      # (Wr, Hr)
    total_steps: int
    latent_factor: int = 8
    contrast: float = 6.0
    sharpness: tuple[float, float] = (4.0, 14.0)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("projection width d must be >= 1")
        if self.keys.shape[1] != self.d:
            raise ShapeMismatch(f"keys shape {self.keys.shape} inconsistent with d={self.d}")

    def edge_sharpness(self, t: int) -> float:
        lo, hi = self.sharpness
        if self.total_steps <= 1:
            return 0.5 * (lo + hi)
        frac = (t - 1) / (self.total_steps - 1)
        return lo + (hi - lo) * frac

    def queries(self, t: int, h: int, w: int) -> np.ndarray:
        """Query matrix (h*w, d) whose logits carry the blob structure.

        Keys are sqrt(d) times the identity, so softmax(Q K^T / sqrt(d))
        sees exactly these rows as logits.
        """
        wr, hr = self.region_size
        xs = (np.arange(w) + 0.5) * (wr / w)
        ys = (np.arange(h) + 0.5) * (hr / h)
        px, py = np.meshgrid(xs, ys)
        shape_field = np.tanh(self.edge_sharpness(t) * (1.0 - self.blob.phi(px, py)))
        flat = shape_field.reshape(-1)

        q = np.zeros((h * w, self.d), dtype=np.float64)
        for ordinal, token in enumerate(self.subject_tokens):
            q[:, token] = self.contrast * self.subject_scales[ordinal] * flat
        q[:, 0] = -0.3 * self.contrast * flat  # BOS soaks up background mass
        return q


def softmax_attention(q: np.ndarray, k: np.ndarray, n_heads: int = 1,
                      head_jitter: np.ndarray | None = None) -> np.ndarray:
    """Literal attention rows: softmax(q k^T / sqrt(d)) per head.

    Returns (n_heads, pixels, tokens); jitter, when given, is added to the
    logits of each head before the softmax.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"query {q.shape} and key {k.shape} widths differ")
    d = q.shape[1]
    logits = q @ k.T / math.sqrt(d)
    out = np.empty((n_heads, q.shape[0], k.shape[0]), dtype=np.float64)
    for head in range(n_heads):
        head_logits = logits
        if head_jitter is not None:
            head_logits = logits + head_jitter[head]
        shifted = head_logits - head_logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out[head] = e / e.sum(axis=1, keepdims=True)
    return out


def synthetic_attention(params: SyntheticSceneParams, t: int, layer_id: str) -> np.ndarray:
    """One region's attention tensor (heads, h, w, tokens) at (t, layer)."""
    denom = resolution_denominator(layer_id)
    wr, hr = params.region_size
    lat_h, lat_w = hr // params.latent_factor, wr // params.latent_factor
    h, w = attention_grid(lat_h, lat_w, denom)
    q = params.queries(t, h, w)
    n_heads = params.head_jitter.shape[0]
    attn = softmax_attention(q, params.keys, n_heads, params.head_jitter)
    return attn.reshape(n_heads, h, w, params.keys.shape[0])


def build_scene_params(region: Region, spec: CanvasSpec, token_count: int,
                       subject_tokens: tuple[int, ...], total_steps: int,
                       rng: np.random.Generator, n_heads: int = 2,
                       jitter_scale: float = 0.05) -> SyntheticSceneParams:
    """Draw a region's blob and attention parameters from the seeded rng.

    The blob (including its axis-aligned extent) is kept clear of the
    overlap bands so neighbouring regions never share object pixels.
    """
    wr, hr = region.w, region.h
    m = float(min(wr, hr))
    rx = m * rng.uniform(0.21, 0.27)
    ry = m * rng.uniform(0.21, 0.27)
    theta = rng.uniform(0.0, math.pi)
    pad_x = spec.overlap_x + 4.0
    pad_y = spec.overlap_y + 4.0
    for _ in range(64):
        ex = math.hypot(rx * math.cos(theta), ry * math.sin(theta))
        ey = math.hypot(rx * math.sin(theta), ry * math.cos(theta))
        if pad_x + ex < wr - pad_x - ex and pad_y + ey < hr - pad_y - ey:
            break
        rx *= 0.9
        ry *= 0.9
    cx = float(np.clip(wr / 2 + m * rng.uniform(-0.05, 0.05), pad_x + ex, wr - pad_x - ex))
    cy = float(np.clip(hr / 2 + m * rng.uniform(-0.05, 0.05), pad_y + ey, hr - pad_y - ey))
    blob = EllipseBlob(cx=cx, cy=cy, rx=rx, ry=ry, theta=theta)

    d = token_count
    keys = math.sqrt(d) * np.eye(token_count, dtype=np.float64)
    scales = rng.uniform(0.9, 1.0, size=len(subject_tokens))
    jitter = rng.normal(0.0, jitter_scale, size=(n_heads, token_count))
    return SyntheticSceneParams(
        blob=blob, keys=keys, d=d, subject_tokens=subject_tokens,
        subject_scales=scales, head_jitter=jitter,
        region_size=(wr, hr), total_steps=total_steps,
        latent_factor=spec.latent_factor,
    )


def _render_region(blob: EllipseBlob, width: int, height: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Flat-ish background with a hard-edged filled ellipse."""
    base_luma = rng.uniform(40, 110)
    object_luma = rng.uniform(175, 230)
    bg = base_luma + rng.uniform(-15, 15, size=3)
    fg = object_luma + rng.uniform(-15, 15, size=3)
    img = np.empty((height, width, 3), dtype=np.float64)
    ramp = np.linspace(-8.0, 8.0, height)[:, None]
    img[:] = bg[None, None, :]
    img[..., :] += ramp[..., None]
    inside = blob.mask(width, height)
    img[inside] = fg
    return np.clip(img, 0, 255)


class SyntheticBackend:
    """Seed-deterministic backend over implanted elliptical objects."""

    def __init__(self, layer_ids: tuple[str, ...] = DEFAULT_LAYERS, n_heads: int = 2,
                 dtype: str = "f32", jitter_scale: float = 0.05):
        if dtype not in ("f16", "f32"):
            raise ValueError(f"dtype must be f16 or f32, got {dtype!r}")
        for layer_id in layer_ids:
            resolution_denominator(layer_id)
        self.layer_ids = tuple(layer_ids)
        self.n_heads = n_heads
        self.dtype = np.float16 if dtype == "f16" else np.float32
        self.jitter_scale = jitter_scale
        self.backend_id = "synthetic"

    def _region_rng(self, request: GenerationRequest, region_index: int) -> np.random.Generator:
        return np.random.default_rng([request.seed, region_index])

    def scene_params(self, request: GenerationRequest, region_index: int) -> SyntheticSceneParams:
        """Oracle access: the exact scene parameters a generate() call uses."""
        region = request.plan.regions[region_index - 1]
        prompt = request.prompts[region_index - 1]
        tokens, spans = tokenize(prompt.text)
        subject = subject_indices(spans, prompt.subject_start, prompt.subject_end)
        rng = self._region_rng(request, region_index)
        return build_scene_params(region, request.plan.spec, len(tokens), subject,
                                  request.steps, rng, self.n_heads, self.jitter_scale)

    def oracle_region_mask(self, request: GenerationRequest, region_index: int) -> np.ndarray:
        region = request.plan.regions[region_index - 1]
        params = self.scene_params(request, region_index)
        return params.blob.mask(region.w, region.h)

    def oracle_canvas_masks(self, request: GenerationRequest) -> list[np.ndarray]:
        spec = request.plan.spec
        masks = []
        for region in request.plan.regions:
            canvas = np.zeros((spec.height, spec.width), dtype=bool)
            canvas[region.y:region.y + region.h, region.x:region.x + region.w] = \
                self.oracle_region_mask(request, region.index)
            masks.append(canvas)
        return masks

    def generate(self, request: GenerationRequest) -> GenerationResult:
        plan = request.plan
        spec = plan.spec
        acc = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
        weight = np.zeros((spec.height, spec.width, 1), dtype=np.float64)

        stacks: list[AttentionStack] = []
        token_rows: list[tuple[str, ...]] = []
        subject_rows: list[tuple[int, ...]] = []
        for region, prompt in zip(plan.regions, request.prompts):
            tokens, spans = tokenize(prompt.text)
            subject = subject_indices(spans, prompt.subject_start, prompt.subject_end)
            token_rows.append(tuple(tokens))
            subject_rows.append(subject)

            rng = self._region_rng(request, region.index)
            params = build_scene_params(region, spec, len(tokens), subject,
                                        request.steps, rng, self.n_heads, self.jitter_scale)
            stack = AttentionStack(region_index=region.index)
            for t in range(1, request.steps + 1):
                for layer_id in self.layer_ids:
                    tensor = synthetic_attention(params, t, layer_id)
                    stack.entries[(t, layer_id)] = tensor.astype(self.dtype)
            stacks.append(stack)

            region_img = _render_region(params.blob, region.w, region.h, rng)
            acc[region.y:region.y + region.h, region.x:region.x + region.w] += region_img
            weight[region.y:region.y + region.h, region.x:region.x + region.w] += 1.0

        image = np.rint(acc / np.maximum(weight, 1.0)).astype(np.uint8)
        token_map = TokenMap(tokens=tuple(token_rows),
                             subject_token_indices=tuple(subject_rows))
        return GenerationResult(image=image, stacks=stacks, token_map=token_map,
                                backend_id=self.backend_id, request=request)
