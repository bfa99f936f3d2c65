#!/usr/bin/env python3
"""Generate a small synthetic dataset and print what survived.

Writes a demo catalog, runs the full pipeline with the default knobs on a
reduced schedule, and reports per-category acceptance plus mask quality
against the generating ellipses.
"""

import argparse
import json
import tempfile
from pathlib import Path

from mosaicgen.config import config_from_dict
from mosaicgen.dataset import decode_rle, load_coco, miou
from mosaicgen.pipeline import PipelineRunner, run
from mosaicgen.synthetic import SyntheticBackend

DEMO_CATALOG = """\
1\teasel\trare\tan upright tripod for displaying something
2\tseaplane\trare\tan airplane that can land on water
3\tparrot\tcommon\ta bird with bright plumage
4\tcanoe\tcommon\ta small light boat propelled with a paddle
5\tlantern\tfrequent\ta portable lamp with a transparent case
6\tdog\tfrequent\ta domesticated carnivorous mammal
"""


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_out"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--images-per-category", type=int, default=2)
    parser.add_argument("--steps", type=int, default=6)
    parser.add_argument("--objects", default=4,
                        help="objects per canvas: 1, 2, 4 or 'random'")
    args = parser.parse_args()

    catalog_path = Path(tempfile.mkdtemp()) / "catalog.tsv"
    catalog_path.write_text(DEMO_CATALOG, encoding="utf-8")

    objects = args.objects if args.objects == "random" else int(args.objects)
    config = config_from_dict({
        "canvas": {"object_count": objects},
        "catalog_path": str(catalog_path),
        "images_per_category": args.images_per_category,
        "seed": args.seed,
        "steps": args.steps,
        "output_dir": str(args.out),
    })

    stats = run(config, log=print)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))

    with open(args.out / "dataset.json", encoding="utf-8") as fh:
        records, categories = load_coco(fh)
    names = {c.id: c.name for c in categories}

    runner = PipelineRunner(config)
    catalog = runner.load_categories()
    backend = SyntheticBackend(dtype=config.synthetic_dtype)
    produced, references, labels = [], [], []
    for record in records:
        request = runner.build_request(catalog, record.metadata["canvas_index"])
        oracle = backend.oracle_canvas_masks(request)
        for ann in record.annotations:
            produced.append(decode_rle(ann.segmentation))
            references.append(oracle[ann.provenance["region_index"] - 1])
            labels.append(names[ann.category_id])

    if produced:
        print(f"\n{len(produced)} masks vs their generating ellipses: "
              f"mIoU {miou(produced, references):.3f}")
        for label in sorted(set(labels)):
            print(f"  {label}: {labels.count(label)} instance(s)")
    else:
        print("no masks survived filtering; inspect stats.json")


if __name__ == "__main__":
    main()
