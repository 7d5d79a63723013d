"""Convert V-COCO action annotations to ``triplets.jsonl``.

Usage::

    python3 scripts/convert_vcoco.py --vcoco v-coco/data/vcoco/vcoco_trainval.json \
        --coco annotations/instances_trainval_vcoco.json --out data/triplets.jsonl

``--vcoco`` may be repeated (e.g. trainval and test). ``--coco`` is the COCO
instances file that holds the boxes, categories and image sizes for the
annotation ids V-COCO refers to.

Every positive (agent, role object) pair becomes one line::

    {"image_id", "subject", "relation", "object",
     "subject_box": [x1, y1, x2, y2], "object_box": [...], "image_w", "image_h"}

The subject term is the agent's COCO category (always "person"), the relation
is the V-COCO action name, the object term is the role object's COCO category.
Actions without a role object (stand, smile, walk, ...) produce nothing here;
the dataset builder also drops them by name.
"""

import argparse
import json


def _xyxy(bbox):
    x, y, w, h = bbox
    return [x, y, x + w, y + h]


def _flat(values):
    out = []
    for v in values:
        out.extend(_flat(v) if isinstance(v, list) else [v])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vcoco", action="append", required=True)
    ap.add_argument("--coco", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    with open(args.coco, encoding="utf-8") as fh:
        coco = json.load(fh)
    anns = {a["id"]: a for a in coco["annotations"]}
    cats = {c["id"]: c["name"] for c in coco["categories"]}
    sizes = {im["id"]: (im["width"], im["height"]) for im in coco["images"]}

    rows, seen = [], set()
    for path in args.vcoco:
        with open(path, encoding="utf-8") as fh:
            actions = json.load(fh)
        for act in actions:
            n_roles = len(act["role_name"])
            if n_roles < 2:
                continue
            ann_ids = [int(v) for v in _flat(act["ann_id"])]
            labels = [int(v) for v in _flat(act["label"])]
            n = len(ann_ids)
            # role_object_id is stored flat and role-major: entry r * n + i
            flat = [int(v) for v in _flat(act["role_object_id"])]
            roles = [[flat[r * n + i] for r in range(n_roles)] for i in range(n)]
            for i in range(n):
                if not labels[i]:
                    continue
                agent = anns.get(ann_ids[i])
                for r in range(1, n_roles):
                    obj = anns.get(roles[i][r])
                    if agent is None or obj is None or roles[i][r] == 0:
                        continue
                    key = (agent["id"], act["action_name"], obj["id"])
                    if key in seen:
                        continue
                    seen.add(key)
                    w, h = sizes[agent["image_id"]]
                    rows.append({
                        "image_id": str(agent["image_id"]),
                        "subject": cats[agent["category_id"]],
                        "relation": act["action_name"],
                        "object": cats[obj["category_id"]],
                        "subject_box": _xyxy(agent["bbox"]),
                        "object_box": _xyxy(obj["bbox"]),
                        "image_w": w,
                        "image_h": h,
                    })
    rows.sort(key=lambda r: (int(r["image_id"]), r["relation"], r["subject_box"], r["object_box"]))
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"{len(rows)} triplets written to {args.out}")


if __name__ == "__main__":
    main()
