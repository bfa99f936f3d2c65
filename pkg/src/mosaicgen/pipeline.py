"""End-to-end orchestration: plan, generate, aggregate, mask, emit.

Output tree under ``output_dir``:

    images/canvas_00000.png    the dataset image per canvas
    tensors/canvas_00000.mfat  attention container (+ sibling PNG)
    records/canvas_00000.json  per-canvas record incl. region outcomes
    manifest.jsonl             one line per completed canvas, canvas order
    dataset.json               COCO-style document over all records
    stats.json                 RunStats

Reruns skip canvases whose manifest entries verify; everything written is
byte-deterministic for a fixed (config, seed).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from . import mfat
from .attention import aggregate
from .backend import GenerationRequest, GenerationResult, generate, iter_mfat_results
from .catalog import Category, build_prompt, load_catalog, sample_categories
from .config import PipelineConfig
from .dataset import DatasetRecord, RunStats, annotation_from_mask
from .errors import ConfigError, IoFailure, MosaicError
from .geometry import jitter_center, plan_regions
from .masks import (
    DegenerateMap,
    MaskProvenance,
    components,
    expand,
    filter_mask,
    otsu,
    refine,
)
from .bilateral import SolverDiverged
from .synthetic import SyntheticBackend


@dataclass
class RegionOutcome:
    region_index: int
    category_id: int
    accepted: bool
    reason: str | None
    area_fraction: float | None
    component_count: int | None


@dataclass
class CanvasResult:
    index: int
    record: DatasetRecord
    outcomes: list[RegionOutcome]


def canvas_seed(run_seed: int, canvas_index: int) -> int:
    """Stable per-canvas substream seed."""
    ss = np.random.SeedSequence([run_seed, canvas_index])
    return int(ss.generate_state(1, np.uint64)[0])


def extract_masks(result: GenerationResult, config: PipelineConfig):
    """Mask every region of one generation result.

    Returns (instance masks, outcomes); regions whose map degenerates or
    whose solver diverges are counted as rejections, not run failures.
    """
    plan = result.request.plan
    masks = []
    outcomes = []
    for region, stack, prompt in zip(plan.regions, result.stacks, result.request.prompts):
        outcome = RegionOutcome(region_index=region.index, category_id=prompt.category_id,
                                accepted=False, reason=None, area_fraction=None,
                                component_count=None)
        outcomes.append(outcome)
        try:
            agg = aggregate(stack, result.token_map, region, config.aggregation)
            threshold, coarse = otsu(agg)
        except DegenerateMap:
            outcome.reason = "DegenerateMap"
            continue
        crop = result.image[region.y:region.y + region.h, region.x:region.x + region.w]
        try:
            refined = refine(coarse, crop, config.bilateral)
        except SolverDiverged:
            outcome.reason = "SolverDiverged"
            continue
        comps = components(refined.values, config.filters.connectivity)
        decision = filter_mask(refined, comps, config.filters, region)
        outcome.area_fraction = decision.area_fraction
        outcome.component_count = decision.component_count
        if not decision.is_accepted:
            outcome.reason = decision.reason
            continue
        outcome.accepted = True
        provenance = MaskProvenance(
            threshold_used=threshold,
            component_count_before_filter=comps.count,
            area_fraction=decision.area_fraction,
        )
        masks.append(expand(decision.accepted, region, plan.spec,
                            prompt.category_id, provenance))
    return masks, outcomes


def build_record(result: GenerationResult, masks, outcomes, canvas_index: int,
                 config: PipelineConfig, image_rel_path: str) -> DatasetRecord:
    image_id = canvas_index + 1
    annotations = [annotation_from_mask(m, annotation_id=i + 1, image_id=image_id)
                   for i, m in enumerate(masks)]
    request = result.request
    metadata = {
        "canvas_index": canvas_index,
        "seed": request.seed,
        "backend_id": result.backend_id,
        "config_digest": config.digest(),
        "split_axis": request.plan.split_axis,
        "prompts": [
            {"text": p.text, "category_id": p.category_id, "template_id": p.template_id}
            for p in request.prompts
        ],
        "region_outcomes": [
            {
                "region_index": o.region_index,
                "category_id": o.category_id,
                "accepted": o.accepted,
                "reason": o.reason,
                "area_fraction": o.area_fraction,
                "component_count": o.component_count,
            }
            for o in outcomes
        ],
    }
    spec = request.plan.spec
    return DatasetRecord(image_id=image_id, file_path=image_rel_path,
                         width=spec.width, height=spec.height,
                         annotations=annotations, metadata=metadata)


class PipelineRunner:
    def __init__(self, config: PipelineConfig, log=None):
        self.config = config
        self.out = Path(config.output_dir)
        self.log = log or (lambda message: None)

    # ------------------------------------------------------------------
    # scheduling

    def load_categories(self) -> list[Category]:
        with open(self.config.catalog_path, "rb") as fh:
            return load_catalog(fh)

    def schedule_size(self, catalog: list[Category]) -> int:
        if self.config.category_strategy == "rare_only":
            pool = sum(1 for c in catalog if c.bucket == "rare")
        else:
            pool = len(catalog)
        counts = self.config.canvas.counts()
        mean_n = sum(counts) / len(counts)
        return max(1, math.ceil(self.config.images_per_category * pool / mean_n))

    def build_request(self, catalog: list[Category], canvas_index: int) -> GenerationRequest:
        config = self.config
        seed = canvas_seed(config.seed, canvas_index)
        rng = np.random.default_rng([config.seed, canvas_index])
        counts = config.canvas.counts()
        n = int(counts[0]) if len(counts) == 1 else int(rng.choice(counts))
        spec = config.canvas.spec_for(n)
        center = jitter_center(spec, rng)
        plan = plan_regions(spec, center, rng)
        cats = sample_categories(catalog, n, config.category_strategy, rng)
        prompts = tuple(build_prompt(c, config.prompt_template) for c in cats)
        return GenerationRequest(plan=plan, prompts=prompts, seed=seed,
                                 steps=config.steps,
                                 guidance_scale=config.guidance_scale,
                                 scheduler_id=config.scheduler_id)

    # ------------------------------------------------------------------
    # per-canvas work

    def paths_for(self, canvas_index: int) -> dict[str, Path]:
        stem = f"canvas_{canvas_index:05d}"
        return {
            "image": self.out / "images" / f"{stem}.png",
            "mfat": self.out / "tensors" / f"{stem}.mfat",
            "record": self.out / "records" / f"{stem}.json",
        }

    def process_canvas(self, backend, request: GenerationRequest,
                       canvas_index: int) -> CanvasResult:
        result = generate(request, backend)
        return self.store_result(result, canvas_index)

    def store_result(self, result: GenerationResult, canvas_index: int) -> CanvasResult:
        paths = self.paths_for(canvas_index)
        for p in paths.values():
            p.parent.mkdir(parents=True, exist_ok=True)
        masks, outcomes = extract_masks(result, self.config)
        image_rel = str(paths["image"].relative_to(self.out))
        record = build_record(result, masks, outcomes, canvas_index, self.config, image_rel)

        mfat.write_mfat(result, paths["mfat"])
        Image.fromarray(result.image, mode="RGB").save(paths["image"], format="PNG")
        with open(paths["record"], "w", encoding="utf-8") as fh:
            json.dump(ds.record_to_dict(record), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return CanvasResult(index=canvas_index, record=record, outcomes=outcomes)

    # ------------------------------------------------------------------
    # manifest and resume

    def manifest_path(self) -> Path:
        return self.out / "manifest.jsonl"

    def manifest_entry(self, canvas_index: int) -> dict:
        paths = self.paths_for(canvas_index)
        return {
            "canvas": canvas_index,
            "record_id": canvas_index + 1,
            "image": str(paths["image"].relative_to(self.out)),
            "mfat": str(paths["mfat"].relative_to(self.out)),
            "record": str(paths["record"].relative_to(self.out)),
            "status": "complete",
        }

    def verified_entries(self) -> dict[int, dict]:
        """Manifest entries whose files exist and parse; others are redone."""
        path = self.manifest_path()
        if not path.exists():
            return {}
        verified = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                index = entry["canvas"]
                if entry.get("status") != "complete":
                    continue
                if entry != self.manifest_entry(index):
                    continue
                paths = self.paths_for(index)
                if not all(p.exists() for p in paths.values()):
                    continue
                with open(paths["record"], encoding="utf-8") as fh:
                    ds.record_from_dict(json.load(fh))
                mfat.read_mfat(paths["mfat"])  # full verify incl. checksums
            except (MosaicError, OSError, ValueError, KeyError):
                continue
            verified[index] = entry
        return verified

    def load_record(self, canvas_index: int) -> CanvasResult:
        paths = self.paths_for(canvas_index)
        with open(paths["record"], encoding="utf-8") as fh:
            record = ds.record_from_dict(json.load(fh))
        outcomes = [
            RegionOutcome(
                region_index=o["region_index"], category_id=o["category_id"],
                accepted=o["accepted"], reason=o["reason"],
                area_fraction=o["area_fraction"], component_count=o["component_count"],
            )
            for o in record.metadata["region_outcomes"]
        ]
        return CanvasResult(index=canvas_index, record=record, outcomes=outcomes)

    # ------------------------------------------------------------------
    # the run loop

    def run(self, dry_run: bool = False) -> RunStats:
        config = self.config
        if config.backend == "synthetic":
            if not config.catalog_path:
                raise ConfigError("catalog_path", "required when backend is 'synthetic'")
            catalog = self.load_categories()
            n_canvases = self.schedule_size(catalog)
            jobs = list(range(n_canvases))
            backend = SyntheticBackend(dtype=config.synthetic_dtype)

            def work(index: int) -> CanvasResult:
                return self.process_canvas(backend, self.build_request(catalog, index), index)
        else:
            if not config.mfat_dir:
                raise ConfigError("mfat_dir", "required when backend is 'mfat_dir'")
            results = list(iter_mfat_results(config.mfat_dir))
            catalog = self.mfat_categories(results)
            jobs = list(range(len(results)))

            def work(index: int) -> CanvasResult:
                return self.store_result(results[index], index)

        if dry_run:
            self.log(f"dry run: {len(jobs)} canvases -> {self.out}")
            return RunStats(canvases_attempted=0).finalize()

        self.out.mkdir(parents=True, exist_ok=True)
        done = self.verified_entries()
        pending = [i for i in jobs if i not in done]
        self.log(f"{len(jobs)} canvases scheduled, {len(done)} already complete")

        results_by_index: dict[int, CanvasResult] = {}
        for index in jobs:
            if index in done:
                results_by_index[index] = self.load_record(index)

        # the manifest is append-only during the run so a crash keeps
        # completed canvases; entries go out strictly in canvas order
        manifest = _OrderedManifestWriter(self.manifest_path(),
                                          self.manifest_entry, jobs)
        for index in jobs:
            if index in done:
                manifest.mark_ready(index)

        if pending:
            if config.workers == 1:
                for index in pending:
                    results_by_index[index] = work(index)
                    manifest.mark_ready(index)
                    self.log(f"canvas {index}: done")
            else:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    futures = {pool.submit(work, i): i for i in pending}
                    remaining = set(futures)
                    while remaining:
                        finished, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                        for future in finished:
                            index = futures[future]
                            results_by_index[index] = future.result()
                            manifest.mark_ready(index)
                            self.log(f"canvas {index}: done")
        manifest.close()

        ordered = [results_by_index[i] for i in jobs]
        stats = RunStats(canvases_attempted=len(jobs))
        for item in ordered:
            for outcome in item.outcomes:
                if outcome.accepted:
                    stats.record_accept(outcome.category_id)
                else:
                    stats.record_reject(outcome.reason or "Unknown")
        stats.finalize()

        records = [item.record for item in ordered]
        renumber_annotations(records)
        try:
            with open(self.out / "dataset.json", "w", encoding="utf-8") as fh:
                ds.emit(records, catalog, fh)
            with open(self.out / "stats.json", "w", encoding="utf-8") as fh:
                json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise IoFailure(f"cannot write outputs under {self.out}: {exc}") from exc
        return stats

    def mfat_categories(self, results) -> list[Category]:
        """Categories for the COCO document when running from stored tensors."""
        if self.config.catalog_path:
            return self.load_categories()
        seen: dict[int, Category] = {}
        for result in results:
            for prompt in result.request.prompts:
                if prompt.category_id not in seen:
                    name = prompt.text[prompt.subject_start:prompt.subject_end]
                    seen[prompt.category_id] = Category(
                        id=prompt.category_id, name=name, bucket="unknown")
        return [seen[k] for k in sorted(seen)]


class _OrderedManifestWriter:
    """Serialized single-writer manifest with strict canvas ordering.

    Completions may arrive out of order from the worker pool; entry i is
    flushed only once every entry before it has been flushed, so the file
    is always a clean prefix of the final manifest.
    """

    def __init__(self, path: Path, entry_for, jobs: list[int]):
        self.path = path
        self.entry_for = entry_for
        self.order = list(jobs)
        self.ready: set[int] = set()
        self.cursor = 0
        tmp = path.with_suffix(".jsonl.tmp")
        tmp.write_text("", encoding="utf-8")
        tmp.replace(path)

    def mark_ready(self, index: int) -> None:
        self.ready.add(index)
        lines = []
        while self.cursor < len(self.order) and self.order[self.cursor] in self.ready:
            entry = self.entry_for(self.order[self.cursor])
            lines.append(json.dumps(entry, sort_keys=True) + "\n")
            self.cursor += 1
        if lines:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.writelines(lines)

    def close(self) -> None:
        if self.cursor != len(self.order):
            raise IoFailure(
                f"manifest incomplete: {self.cursor} of {len(self.order)} entries")


def renumber_annotations(records: list[DatasetRecord]) -> None:
    """Dense, stable annotation ids across the whole dataset."""
    next_id = 1
    for record in records:
        for ann in record.annotations:
            ann.annotation_id = next_id
            next_id += 1


def run(config: PipelineConfig, dry_run: bool = False, log=None) -> RunStats:
    return PipelineRunner(config, log=log).run(dry_run=dry_run)
