"""Convert MS-COCO caption annotations to ``captions.jsonl``.

Usage::

    python3 scripts/convert_coco_captions.py annotations/captions_train2014.json \
        [annotations/captions_val2014.json ...] --out data/captions.jsonl

Each output line is ``{"image_id": "<coco id>", "captions": [...]}``. Captions
keep the order of their annotation ids so the output is deterministic.
"""

import argparse
import json
from collections import defaultdict


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("annotations", nargs="+")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    caps = defaultdict(list)
    for path in args.annotations:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        for ann in doc["annotations"]:
            caps[str(ann["image_id"])].append((ann["id"], ann["caption"].strip()))
    with open(args.out, "w", encoding="utf-8") as fh:
        for image_id in sorted(caps, key=int):
            texts = [c for _, c in sorted(caps[image_id])]
            fh.write(json.dumps({"image_id": image_id, "captions": texts}) + "\n")
    print(f"{len(caps)} images written to {args.out}")


if __name__ == "__main__":
    main()
