#!/usr/bin/env python3
"""Sweep the layout/aggregation knobs on the synthetic backend.

For each knob setting this runs a small generation, scores the surviving
masks against the generating ellipses, and prints one row per setting:
accept rate and mIoU. Useful for sanity-checking how the filters and
aggregation windows interact before an expensive real-model run.
"""

import argparse
import tempfile
from pathlib import Path

from mosaicgen.config import config_from_dict
from mosaicgen.dataset import decode_rle, load_coco, miou
from mosaicgen.pipeline import PipelineRunner, run
from mosaicgen.synthetic import SyntheticBackend

CATALOG = """\
1\teasel\trare\tan upright tripod for displaying something
2\tseaplane\trare\tan airplane that can land on water
3\tparrot\tcommon\ta bird with bright plumage
4\tcanoe\tcommon\ta small light boat propelled with a paddle
"""

SWEEPS = {
    "object_count": [1, 2, 4, "random"],
    "jitter_ratio": [0.25, 0.375, 0.5],
    "overlaps": [(0, 0), (64, 48), (128, 96)],
    "layer_filter": ["1/32", "1/16", "1/8"],
    "step_filter": [2, 4, "all"],
    "template": ["name_only", "photo_single", "photo_single_def"],
}


def run_setting(base_out: Path, catalog_path: Path, seed: int, tag: str,
                overrides: dict) -> tuple[float, float]:
    canvas = {"object_count": 4}
    canvas.update(overrides.pop("canvas", {}))
    doc = {
        "canvas": canvas,
        "catalog_path": str(catalog_path),
        "images_per_category": 1,
        "seed": seed,
        "steps": 5,
        "output_dir": str(base_out / tag),
    }
    doc.update(overrides)
    config = config_from_dict(doc)
    stats = run(config)
    accept = 1.0 - stats.discard_rate

    with open(base_out / tag / "dataset.json", encoding="utf-8") as fh:
        records, _ = load_coco(fh)
    runner = PipelineRunner(config)
    catalog = runner.load_categories()
    backend = SyntheticBackend(dtype=config.synthetic_dtype)
    produced, references = [], []
    for record in records:
        request = runner.build_request(catalog, record.metadata["canvas_index"])
        oracle = backend.oracle_canvas_masks(request)
        for ann in record.annotations:
            produced.append(decode_rle(ann.segmentation))
            references.append(oracle[ann.provenance["region_index"] - 1])
    score = miou(produced, references) if produced else float("nan")
    return accept, score


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("sweep_out"))
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    catalog_path = Path(tempfile.mkdtemp()) / "catalog.tsv"
    catalog_path.write_text(CATALOG, encoding="utf-8")

    print(f"{'knob':<14} {'value':<18} {'accept':>7} {'mIoU':>6}")
    for n in SWEEPS["object_count"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"n_{n}", {"canvas": {"object_count": n}})
        print(f"{'objects':<14} {str(n):<18} {accept:>7.2f} {score:>6.3f}")
    for sigma in SWEEPS["jitter_ratio"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"sigma_{sigma}",
                                    {"canvas": {"jitter_ratio": sigma}})
        print(f"{'jitter':<14} {str(sigma):<18} {accept:>7.2f} {score:>6.3f}")
    for dx, dy in SWEEPS["overlaps"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"overlap_{dx}_{dy}",
                                    {"canvas": {"overlap_x": dx, "overlap_y": dy}})
        print(f"{'overlap':<14} {f'({dx}, {dy})':<18} {accept:>7.2f} {score:>6.3f}")
    for layer in SWEEPS["layer_filter"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"layer_{layer.replace('/', '_')}",
                                    {"aggregation": {"layer_filter": layer}})
        print(f"{'layers':<14} {f'<= {layer}':<18} {accept:>7.2f} {score:>6.3f}")
    for step in SWEEPS["step_filter"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"step_{step}",
                                    {"aggregation": {"step_filter": step}})
        print(f"{'steps':<14} {f'<= {step}':<18} {accept:>7.2f} {score:>6.3f}")
    for template in SWEEPS["template"]:
        accept, score = run_setting(args.out, catalog_path, args.seed,
                                    f"tpl_{template}", {"prompt_template": template})
        print(f"{'template':<14} {template:<18} {accept:>7.2f} {score:>6.3f}")


if __name__ == "__main__":
    main()
