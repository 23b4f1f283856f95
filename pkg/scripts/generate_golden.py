"""Regenerate the committed golden fixtures and expected pipeline outputs.

Everything numeric in this script is straight-line: the fixture bytes are
packed by hand, the forward passes for both head variants are written out
as plain numpy expressions, and the pseudo-labeling and evaluation stages
reuse the brute-force references from tests/bruteforce.py. Only the
serialization helpers (msfk.jsonio) are shared with the library so the
byte-level formatting matches by construction.

Run from the repository root:

    python3 scripts/generate_golden.py

Outputs land in tests/golden/. Committed once; the acceptance suite then
requires the CLI to reproduce these files byte for byte.
"""

from __future__ import annotations

import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from msfk import jsonio  # formatting only
from msfk.geometry import BBox, Detection, GroundTruth
from bruteforce import bf_adaptive_threshold, bf_evaluate, bf_pseudo_labels

GOLDEN = ROOT / "tests" / "golden"
IMAGE_ID = 1
IMAGE_SIZE = (640, 512)  # width, height
LEVEL_SHAPES = ((4, 4), (2, 2))
WIDTH = 8
NUM_LAYERS = 2
NUM_QUERIES = 6
TOKENS_PER_CLASS = (("person", 2), ("car", 1), ("bicycle", 1))
EVAL_THRESHOLDS = [round(0.5 + 0.05 * i, 2) for i in range(10)]


# ----------------------------------------------------------------------
# fixture serialization (hand-packed, mirrors the documented layout)

def pack_tensor(array: np.ndarray) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    out = b"MSTF" + struct.pack("<I", 1) + struct.pack("<I", array.ndim)
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    return out + data.tobytes()


def write_container(path: Path, tensors: dict[str, np.ndarray]) -> None:
    body = b"MSWT" + struct.pack("<II", 1, len(tensors))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded)) + encoded + pack_tensor(array)
    path.write_bytes(body)


def read_container(path: Path) -> dict[str, np.ndarray]:
    raw = path.read_bytes()
    assert raw[:4] == b"MSWT"
    count = struct.unpack_from("<I", raw, 8)[0]
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack_from("<I", raw, offset)[0]
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        assert raw[offset:offset + 4] == b"MSTF"
        ndim = struct.unpack_from("<I", raw, offset + 8)[0]
        dims = struct.unpack_from(f"<{ndim}I", raw, offset + 12)
        offset += 12 + 4 * ndim
        size = int(np.prod(dims))
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        out[name] = values.astype(np.float64).reshape(dims)
    return out


# ----------------------------------------------------------------------
# straight-line math

def softmax_rows(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def attention(w: dict, prefix: str, queries: np.ndarray, memory: np.ndarray) -> np.ndarray:
    q = queries @ w[f"{prefix}.wq"]
    k = memory @ w[f"{prefix}.wk"]
    v = memory @ w[f"{prefix}.wv"]
    scores = softmax_rows((q @ k.T) / math.sqrt(q.shape[1]))
    return (scores @ v) @ w[f"{prefix}.wo"]


def ffn(w: dict, prefix: str, x: np.ndarray) -> np.ndarray:
    hidden = np.maximum(x @ w[f"{prefix}.w1"] + w[f"{prefix}.b1"][None, :], 0.0)
    return hidden @ w[f"{prefix}.w2"] + w[f"{prefix}.b2"][None, :]


def encode(w: dict, prefix: str, levels: list[np.ndarray], tokens: np.ndarray):
    levels = [layer_norm(f + attention(w, f"{prefix}.self_attn", f, f)) for f in levels]
    memory = np.concatenate(levels, axis=0)
    tokens = layer_norm(tokens + attention(w, f"{prefix}.i2t", tokens, memory))
    levels = [layer_norm(f + attention(w, f"{prefix}.t2i", f, tokens)) for f in levels]
    levels = [layer_norm(f + ffn(w, f"{prefix}.ffn_v", f)) for f in levels]
    tokens = layer_norm(tokens + ffn(w, f"{prefix}.ffn_t", tokens))
    return levels, tokens


def pool_classes(token_logits: np.ndarray, token_classes: list[str]):
    names: list[str] = []
    for name in token_classes:
        if name not in names:
            names.append(name)
    columns = [token_logits[:, [i for i, c in enumerate(token_classes) if c == name]].max(axis=1)
               for name in names]
    return np.stack(columns, axis=1), names


def rows_to_detections(boxes_norm: np.ndarray, pooled: np.ndarray, names: list[str]):
    records = []
    scores = sigmoid(pooled)
    best = pooled.argmax(axis=1)
    img_w, img_h = IMAGE_SIZE
    for row in range(boxes_norm.shape[0]):
        cx, cy, bw, bh = boxes_norm[row]
        x1 = (cx - bw / 2.0) * img_w
        y1 = (cy - bh / 2.0) * img_h
        x2 = (cx + bw / 2.0) * img_w
        y2 = (cy + bh / 2.0) * img_h
        cls = int(best[row])
        records.append({
            "image_id": IMAGE_ID,
            "category_id": cls + 1,
            "bbox": [float(x1), float(y1), float(x2 - x1), float(y2 - y1)],
            "score": float(scores[row, cls]),
        })
    return records


def reference_msgdino(w, rgb_levels, ir_levels, tokens, token_classes):
    enc_rgb, t_rgb = encode(w, "enh.rgb", rgb_levels, tokens)
    enc_ir, t_ir = encode(w, "enh.ir", ir_levels, tokens)

    s_rgb = np.concatenate([f @ t_rgb.T for f in enc_rgb], axis=0)
    s_ir = np.concatenate([f @ t_ir.T for f in enc_ir], axis=0)
    row_scores = np.concatenate([s_rgb.max(axis=1), s_ir.max(axis=1)])
    order = sorted(range(len(row_scores)), key=lambda i: (-row_scores[i], i))[:NUM_QUERIES]
    all_rows = np.concatenate([np.concatenate(enc_rgb, axis=0),
                               np.concatenate(enc_ir, axis=0)], axis=0)
    queries = all_rows[order]

    fused_levels = [a + b for a, b in zip(enc_rgb, enc_ir)]
    fused_visual = np.concatenate(fused_levels, axis=0)
    fused_text = np.concatenate([t_rgb, t_ir], axis=0)

    x = queries
    for j in range(NUM_LAYERS):
        x = layer_norm(x + attention(w, f"dec.{j}.self_attn", x, x))
        x = layer_norm(x + attention(w, f"dec.{j}.cross_v", x, fused_visual))
        x = layer_norm(x + attention(w, f"dec.{j}.cross_t", x, fused_text))
        x = layer_norm(x + ffn(w, f"dec.{j}.ffn", x))

    h1 = np.maximum(x @ w["box_mlp.w1"] + w["box_mlp.b1"][None, :], 0.0)
    h2 = np.maximum(h1 @ w["box_mlp.w2"] + w["box_mlp.b2"][None, :], 0.0)
    boxes_norm = sigmoid(h2 @ w["box_mlp.w3"] + w["box_mlp.b3"][None, :])

    token_logits = np.maximum(x @ t_rgb.T, x @ t_ir.T)
    pooled, names = pool_classes(token_logits, token_classes)
    return rows_to_detections(boxes_norm, pooled, names)


def reference_msyolow(w, rgb_levels, ir_levels, tokens, token_classes):
    enc_rgb, t_rgb = encode(w, "enh.rgb", rgb_levels, tokens)
    enc_ir, t_ir = encode(w, "enh.ir", ir_levels, tokens)
    fused_levels = [a + b for a, b in zip(enc_rgb, enc_ir)]
    records = []
    for level in fused_levels:
        boxes_norm = sigmoid(level @ w["conv_box.w"] + w["conv_box.b"][None, :])
        token_logits = np.maximum(level @ t_rgb.T, level @ t_ir.T)
        pooled, names = pool_classes(token_logits, token_classes)
        records.extend(rows_to_detections(boxes_norm, pooled, names))
    return records


# ----------------------------------------------------------------------
# downstream reference stages (shared brute-force logic)

def records_to_detections(records: list[dict]) -> list[Detection]:
    out = []
    for rec in records:
        x, y, bw, bh = rec["bbox"]
        out.append(Detection(
            box=BBox(x, y, x + bw, y + bh),
            score=rec["score"],
            class_id=rec["category_id"],
            image_id=rec["image_id"],
        ))
    return out


def clamp_xywh(x1, y1, x2, y2):
    img_w, img_h = IMAGE_SIZE
    cx1 = min(max(x1, 0.0), float(img_w))
    cy1 = min(max(y1, 0.0), float(img_h))
    cx2 = min(max(x2, 0.0), float(img_w))
    cy2 = min(max(y2, 0.0), float(img_h))
    return [round(cx1, 6), round(cy1, 6), round(cx2 - cx1, 6), round(cy2 - cy1, 6)]


def percentile(sorted_desc: list[float], q: float) -> float:
    asc = sorted(sorted_desc)
    pos = q * (len(asc) - 1)
    lo = int(math.floor(pos))
    frac = pos - lo
    if lo + 1 >= len(asc):
        return asc[lo]
    return asc[lo] + frac * (asc[lo + 1] - asc[lo])


def reference_pseudo_outputs(dataset: dict, records: list[dict]):
    dets = records_to_detections(records)
    gts = []
    for ann in dataset["annotations"]:
        x, y, bw, bh = ann["bbox"]
        gts.append(GroundTruth(BBox(x, y, x + bw, y + bh), ann["category_id"], ann["image_id"]))
    accepted = bf_pseudo_labels(dets, gts)

    merged = {
        "images": dataset["images"],
        "annotations": list(dataset["annotations"]),
        "categories": dataset["categories"],
    }
    next_id = max(a["id"] for a in dataset["annotations"]) + 1
    for d in accepted:
        merged["annotations"].append({
            "id": next_id,
            "image_id": d.image_id,
            "category_id": d.class_id,
            "bbox": clamp_xywh(d.box.x1, d.box.y1, d.box.x2, d.box.y2),
            "is_pseudo": True,
        })
        next_id += 1

    scores = sorted((d.score for d in dets), reverse=True)[:50]
    stats_row = [
        IMAGE_ID,
        len(scores),
        percentile(scores, 0.5),
        percentile(scores, 0.75),
        bf_adaptive_threshold([d.score for d in dets], 0.35),
    ]
    return merged, [stats_row]


def reference_eval_outputs(dataset: dict, records: list[dict]):
    dets = records_to_detections(records)
    gts = []
    for ann in dataset["annotations"]:
        x, y, bw, bh = ann["bbox"]
        gts.append(GroundTruth(BBox(x, y, x + bw, y + bh), ann["category_id"], ann["image_id"]))
    class_ids = [c["id"] for c in dataset["categories"]]
    image_ids = [im["id"] for im in dataset["images"]]
    per_class = bf_evaluate(image_ids, class_ids, dets, gts, EVAL_THRESHOLDS)

    classes = []
    for cid in sorted(per_class):
        name = next(c["name"] for c in dataset["categories"] if c["id"] == cid)
        ap_by_iou = per_class[cid]
        values = [ap_by_iou[t] for t in EVAL_THRESHOLDS]
        classes.append({
            "class_id": cid,
            "name": name,
            "num_gt": sum(1 for g in gts if g.class_id == cid),
            "ap_by_iou": {f"{t:.2f}": ap_by_iou[t] for t in EVAL_THRESHOLDS},
            "ap50": ap_by_iou[0.5],
            "ap75": ap_by_iou[0.75],
            "mean_ap": sum(values) / len(values),
        })
    excluded = [cid for cid in class_ids if cid not in per_class]
    mean_aps = [c["mean_ap"] for c in classes]
    ap50s = [c["ap50"] for c in classes]
    ap75s = [c["ap75"] for c in classes]
    report = {
        "classes": classes,
        "excluded_class_ids": excluded,
        "map": sum(mean_aps) / len(mean_aps),
        "map50": sum(ap50s) / len(ap50s),
        "map75": sum(ap75s) / len(ap75s),
        "all": sum(ap50s) / len(ap50s),
        "config": {
            "iou_thresholds": EVAL_THRESHOLDS,
            "recall_points": 101,
            "max_dets_per_image": 100,
        },
    }
    names = [c["name"] for c in classes] + ["All"]
    cells = [jsonio.format_float(v) for v in ap50s + [report["all"]]]
    widths = [max(len(n), len(v), 10) for n, v in zip(names, cells)]
    header = "  ".join(n.rjust(w) for n, w in zip(names, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
    return report, header + "\n" + row + "\n"


# ----------------------------------------------------------------------

def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)

    # fixtures; draw order is fixed: RGB levels, IR levels, text, weights
    rgb = {f"level_{i}": rng.standard_normal((h, w, WIDTH)) for i, (h, w) in enumerate(LEVEL_SHAPES)}
    ir = {f"level_{i}": rng.standard_normal((h, w, WIDTH)) for i, (h, w) in enumerate(LEVEL_SHAPES)}
    text = {f"class/{name}": 0.25 * rng.standard_normal((count, WIDTH))
            for name, count in TOKENS_PER_CLASS}

    weights: dict[str, np.ndarray] = {
        "hyper.d": np.array([float(WIDTH)]),
        "hyper.j": np.array([float(NUM_LAYERS)]),
        "hyper.n_q": np.array([float(NUM_QUERIES)]),
        "hyper.l": np.array([float(len(LEVEL_SHAPES))]),
    }
    hidden = 2 * WIDTH
    for m in ("rgb", "ir"):
        for blk in ("self_attn", "i2t", "t2i"):
            for p in ("wq", "wk", "wv", "wo"):
                weights[f"enh.{m}.{blk}.{p}"] = 0.12 * rng.standard_normal((WIDTH, WIDTH))
        for f in ("ffn_v", "ffn_t"):
            weights[f"enh.{m}.{f}.w1"] = 0.12 * rng.standard_normal((WIDTH, hidden))
            weights[f"enh.{m}.{f}.b1"] = 0.12 * rng.standard_normal(hidden)
            weights[f"enh.{m}.{f}.w2"] = 0.12 * rng.standard_normal((hidden, WIDTH))
            weights[f"enh.{m}.{f}.b2"] = 0.12 * rng.standard_normal(WIDTH)
    for j in range(NUM_LAYERS):
        for blk in ("self_attn", "cross_v", "cross_t"):
            for p in ("wq", "wk", "wv", "wo"):
                weights[f"dec.{j}.{blk}.{p}"] = 0.12 * rng.standard_normal((WIDTH, WIDTH))
        weights[f"dec.{j}.ffn.w1"] = 0.12 * rng.standard_normal((WIDTH, hidden))
        weights[f"dec.{j}.ffn.b1"] = 0.12 * rng.standard_normal(hidden)
        weights[f"dec.{j}.ffn.w2"] = 0.12 * rng.standard_normal((hidden, WIDTH))
        weights[f"dec.{j}.ffn.b2"] = 0.12 * rng.standard_normal(WIDTH)
    for name, shape in (("box_mlp.w1", (WIDTH, WIDTH)), ("box_mlp.b1", (WIDTH,)),
                        ("box_mlp.w2", (WIDTH, WIDTH)), ("box_mlp.b2", (WIDTH,)),
                        ("box_mlp.w3", (WIDTH, 4)), ("box_mlp.b3", (4,)),
                        ("conv_box.w", (WIDTH, 4)), ("conv_box.b", (4,))):
        weights[name] = 0.12 * rng.standard_normal(shape)

    write_container(GOLDEN / "features_rgb.mswt", rgb)
    write_container(GOLDEN / "features_ir.mswt", ir)
    write_container(GOLDEN / "text.mswt", text)
    write_container(GOLDEN / "weights.mswt", weights)

    # read back so the reference consumes the exact float32 fixture values
    rgb_levels = [t.reshape(-1, WIDTH) for t in read_container(GOLDEN / "features_rgb.mswt").values()]
    ir_levels = [t.reshape(-1, WIDTH) for t in read_container(GOLDEN / "features_ir.mswt").values()]
    text_loaded = read_container(GOLDEN / "text.mswt")
    token_classes: list[str] = []
    blocks = []
    for name, block in text_loaded.items():
        token_classes.extend([name.removeprefix("class/")] * block.shape[0])
        blocks.append(block)
    tokens = np.concatenate(blocks, axis=0)
    w = read_container(GOLDEN / "weights.mswt")

    results = {
        "msgdino": reference_msgdino(w, rgb_levels, ir_levels, tokens, token_classes),
        "msyolow": reference_msyolow(w, rgb_levels, ir_levels, tokens, token_classes),
    }
    for head, records in results.items():
        jsonio.dump_json(records, GOLDEN / f"results_{head}.json")

    # Ground truth is crafted from the computed results so the golden chain
    # exercises real branches: the tau survivor of the query head must be
    # accepted as a pseudo-label, while exact copies of other detections
    # give the evaluator true positives (and collide with the gate).
    def tau_survivors(records):
        dets = records_to_detections(records)
        return bf_pseudo_labels(dets, [])

    survivors = tau_survivors(json.loads((GOLDEN / "results_msgdino.json").read_text()))
    assert survivors, "query-head fixture must yield at least one tau survivor"
    survivor = survivors[0]

    def overlaps_survivor(bbox, category_id):
        if category_id != survivor.class_id:
            return False
        from bruteforce import bf_iou
        box = BBox(bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3])
        return bf_iou(box, survivor.box) >= 0.3

    annotations = []

    def add_gt(bbox, category_id):
        annotations.append({
            "id": len(annotations) + 1,
            "image_id": IMAGE_ID,
            "category_id": category_id,
            "bbox": clamp_xywh(bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]),
        })

    # eval anchor from the query head: a non-surviving detection of a class
    # other than the survivor's, copied verbatim
    msgdino_records = json.loads((GOLDEN / "results_msgdino.json").read_text())
    anchor = next(r for r in msgdino_records if r["category_id"] != survivor.class_id)
    add_gt(anchor["bbox"], anchor["category_id"])

    # eval anchor from the conv head, kept clear of the survivor's class gate
    msyolow_records = json.loads((GOLDEN / "results_msyolow.json").read_text())
    anchor2 = next(r for r in msyolow_records
                   if not overlaps_survivor(r["bbox"], r["category_id"]))
    add_gt(anchor2["bbox"], anchor2["category_id"])

    # far-corner boxes that no detection reaches
    add_gt([10.0, 10.0, 60.0, 50.0], 1)
    add_gt([560.0, 420.0, 70.0, 80.0], 2)

    assert not any(overlaps_survivor(a["bbox"], a["category_id"]) for a in annotations)
    dataset = {
        "images": [{
            "id": IMAGE_ID,
            "file_name": "scene_0001.jpg",
            "width": IMAGE_SIZE[0],
            "height": IMAGE_SIZE[1],
            "file_name_ir": "scene_0001_ir.png",
        }],
        "annotations": annotations,
        "categories": [
            {"id": 1, "name": "person"},
            {"id": 2, "name": "car"},
            {"id": 3, "name": "bicycle"},
        ],
    }
    jsonio.dump_json(dataset, GOLDEN / "golden_dataset.json")

    # downstream stages consume the serialized (6-decimal) records
    for head in ("msgdino", "msyolow"):
        loaded = json.loads((GOLDEN / f"results_{head}.json").read_text())
        merged, stats_rows = reference_pseudo_outputs(dataset, loaded)
        jsonio.dump_json(merged, GOLDEN / f"pseudo_{head}.json")
        jsonio.write_csv(GOLDEN / f"stats_{head}.csv",
                         ["image_id", "count", "median", "p75", "tau"], stats_rows)
        report, table = reference_eval_outputs(dataset, loaded)
        jsonio.dump_json(report, GOLDEN / f"report_{head}.json")
        (GOLDEN / f"table_{head}.txt").write_text(table, encoding="utf-8", newline="\n")

    accepted_counts = {}
    for head in ("msgdino", "msyolow"):
        n = len(results[head])
        kept = json.loads((GOLDEN / f"pseudo_{head}.json").read_text())
        report = json.loads((GOLDEN / f"report_{head}.json").read_text())
        pseudo = sum(1 for a in kept["annotations"] if a.get("is_pseudo"))
        accepted_counts[head] = pseudo
        print(f"{head}: {n} detections, {pseudo} pseudo-labels accepted, "
              f"map50 {report['map50']:.6f}")
    assert accepted_counts["msgdino"] >= 1, "golden chain must accept a pseudo-label"


if __name__ == "__main__":
    main()
