"""Running both detection heads on synthetic fixtures.

Builds random multi-scale features for the visible and thermal streams,
prompt-token embeddings for three classes, and a random weight container,
then runs the query-based head (msgdino) and the dense convolutional head
(msyolow) and prints what they produce.

Run from the repository root:  python3 demos/02_detection_heads.py
"""
import tempfile
from pathlib import Path

from msfk.fusion import (
    RGB, IR,
    random_modality_features, random_text_embeddings, random_head_weights,
    encode_modality, modality_affinity, select_queries,
    forward_msgdino, forward_msyolow,
    save_head_weights, load_head_weights,
)
from msfk.geometry import class_nms

rgb = random_modality_features(1, RGB)          # levels: 4x4 and 2x2, width 8
ir = random_modality_features(2, IR)
text = random_text_embeddings(3)                # person (2 tokens), car, bicycle
weights = random_head_weights(4)

# Weight containers round-trip through the binary fixture format.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "weights.mswt"
    save_head_weights(weights, path)
    weights = load_head_weights(path)
print(f"weights: d={weights.width}, layers={weights.num_layers}, "
      f"queries={weights.num_queries}, levels={weights.num_levels}")

# Language-guided query selection: the strongest text-affinity positions
# across both streams become the object queries, with provenance.
enc_rgb, t_rgb = encode_modality(rgb, text, weights)
enc_ir, t_ir = encode_modality(ir, text, weights)
queries = select_queries(
    modality_affinity(enc_rgb, t_rgb),
    modality_affinity(enc_ir, t_ir),
    enc_rgb, enc_ir, weights.num_queries,
)
print("\nselected queries (modality, level, position, affinity):")
for p in queries.provenance:
    print(f"  {p.modality:3s} level {p.level} pos {p.spatial_index:2d}  "
          f"score {p.score:+.3f}")

# The full query head: decode, regress boxes, max-fuse class logits.
detections = forward_msgdino(rgb, ir, text, weights, image_size=(640, 512))
print("\nmsgdino detections (one per query):")
for d in detections:
    print(f"  class {d.class_id}  score {d.score:.3f}  "
          f"box ({d.box.x1:6.1f},{d.box.y1:6.1f})-({d.box.x2:6.1f},{d.box.y2:6.1f})")

# The dense head emits one detection per grid position per level; NMS is
# the caller's choice, so apply it here to get a short list.
dense = forward_msyolow(rgb, ir, text, weights, image_size=(640, 512))
print(f"\nmsyolow raw detections: {len(dense)} (one per position)")
kept = class_nms(dense, iou_thresh=0.5)
print(f"after class-wise NMS at IoU 0.5: {len(kept)} kept")
for d in kept[:5]:
    print(f"  class {d.class_id}  score {d.score:.3f}")
