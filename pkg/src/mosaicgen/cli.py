"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 backend failure, 4 I/O or file
format failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from . import mfat, pipeline
from .backend import validate_result
from .catalog import convert_lvis_categories, load_catalog, save_catalog
from .config import PipelineConfig, apply_overrides, load_config
from .errors import BackendFailure, ConfigError, FormatError, IoFailure
from .geometry import jitter_center, plan_regions, plan_to_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_IO = 4

_OVERLAY_COLORS = [(255, 64, 64), (64, 196, 64), (64, 96, 255), (240, 200, 32)]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline config YAML")
    parser.add_argument("--seed", type=int, help="override the config seed")


def _load(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    return apply_overrides(
        config,
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        backend=getattr(args, "backend", None),
        output_dir=getattr(args, "out", None),
    )


def cmd_run(args) -> int:
    config = _load(args)
    stats = pipeline.run(config, dry_run=args.dry_run, log=lambda m: print(m, flush=True))
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_plan(args) -> int:
    config = _load(args)
    rng = np.random.default_rng([config.seed, 0])
    counts = config.canvas.counts()
    n = int(counts[0]) if len(counts) == 1 else int(rng.choice(counts))
    spec = config.canvas.spec_for(n)
    center = jitter_center(spec, rng)
    plan = plan_regions(spec, center, rng)
    doc = plan_to_dict(plan)
    if config.catalog_path:
        from .catalog import build_prompt, sample_categories

        with open(config.catalog_path, "rb") as fh:
            catalog = load_catalog(fh)
        cats = sample_categories(catalog, n, config.category_strategy, rng)
        doc["prompts"] = [
            {
                "text": p.text, "subject_start": p.subject_start,
                "subject_end": p.subject_end, "category_id": p.category_id,
                "template_id": p.template_id,
            }
            for p in (build_prompt(c, config.prompt_template) for c in cats)
        ]
    doc["sampler"] = {
        "seed": config.seed, "steps": config.steps,
        "guidance_scale": config.guidance_scale, "scheduler_id": config.scheduler_id,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_masks(args) -> int:
    config = _load(args)
    result = mfat.read_mfat(args.mfat)
    validate_result(result)
    masks, outcomes = pipeline.extract_masks(result, config)
    out = Path(args.out)
    mask_dir = out / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)

    overlay = result.image.astype(np.float64)
    for mask in masks:
        mono = (mask.values * np.uint8(255))
        Image.fromarray(mono, mode="L").save(
            mask_dir / f"mask_r{mask.region_index}.png", format="PNG")
        color = np.array(_OVERLAY_COLORS[(mask.region_index - 1) % len(_OVERLAY_COLORS)])
        overlay[mask.values] = 0.5 * overlay[mask.values] + 0.5 * color
    Image.fromarray(np.rint(overlay).astype(np.uint8), mode="RGB").save(
        out / "preview.png", format="PNG")

    record = pipeline.build_record(result, masks, outcomes, canvas_index=0,
                                   config=config, image_rel_path="preview.png")
    with open(out / "record.json", "w", encoding="utf-8") as fh:
        json.dump(ds.record_to_dict(record), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for outcome in outcomes:
        verdict = "accepted" if outcome.accepted else f"rejected ({outcome.reason})"
        print(f"region {outcome.region_index}: {verdict}")
    print(f"{len(masks)} mask(s) -> {out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    record_paths = sorted(Path(args.records).glob("*.json"))
    if not record_paths:
        raise IoFailure(f"no record files under {args.records}")
    records = []
    for path in record_paths:
        with open(path, encoding="utf-8") as fh:
            records.append(ds.record_from_dict(json.load(fh)))
    with open(args.catalog, "rb") as fh:
        catalog = load_catalog(fh)
    pipeline.renumber_annotations(records)
    with open(args.out, "w", encoding="utf-8") as fh:
        ds.emit(records, catalog, fh)
    print(f"{len(records)} records -> {args.out}")
    return EXIT_OK


def _load_mask_dir(directory: Path) -> list[np.ndarray]:
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise IoFailure(f"no PNG masks under {directory}")
    return [np.asarray(Image.open(p).convert("L")) > 0 for p in paths]


def cmd_eval(args) -> int:
    got = _load_mask_dir(Path(args.masks))
    want = _load_mask_dir(Path(args.references))
    score = ds.miou(got, want)
    print(f"mIoU: {score:.6f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = Path(args.manifest)
    base = manifest.parent
    stats = ds.RunStats()
    lines = [l for l in manifest.read_text(encoding="utf-8").splitlines() if l.strip()]
    stats.canvases_attempted = len(lines)
    for line in lines:
        entry = json.loads(line)
        with open(base / entry["record"], encoding="utf-8") as fh:
            record = ds.record_from_dict(json.load(fh))
        for outcome in record.metadata.get("region_outcomes", []):
            if outcome["accepted"]:
                stats.record_accept(outcome["category_id"])
            else:
                stats.record_reject(outcome["reason"] or "Unknown")
    stats.finalize()
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_catalog_convert(args) -> int:
    with open(args.annotations, "rb") as fh:
        categories = convert_lvis_categories(fh)
    with open(args.out, "w", encoding="utf-8") as fh:
        save_catalog(categories, fh)
    print(f"{len(categories)} categories -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaicgen",
        description="Synthesize multi-object detection datasets from "
                    "region-prompted diffusion attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline")
    _add_common(p)
    p.add_argument("--workers", type=int, help="parallel canvas workers")
    p.add_argument("--backend", choices=["synthetic", "mfat_dir"])
    p.add_argument("--out", type=Path, help="output directory override")
    p.add_argument("--dry-run", action="store_true",
                   help="validate config and print the schedule, write nothing")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="print a canvas plan (with prompts if a catalog is set)")
    _add_common(p)
    p.add_argument("--out", type=Path, help="write the plan JSON here instead of stdout")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("masks", help="extract masks from one MFAT file")
    _add_common(p)
    p.add_argument("mfat", type=Path)
    p.add_argument("--out", type=Path, default=Path("masks_out"))
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("dataset", help="assemble record files into a COCO-style dataset")
    p.add_argument("records", type=Path, help="directory of record JSON files")
    p.add_argument("--catalog", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("eval", help="mean IoU between two directories of mask PNGs")
    p.add_argument("masks", type=Path)
    p.add_argument("references", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="recompute run statistics from a manifest")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("catalog-convert",
                       help="convert LVIS-style annotations to the catalog format")
    p.add_argument("annotations", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_catalog_convert)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (FormatError, IoFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
