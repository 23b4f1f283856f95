"""Multispectral vision-language detection heads on fixture features.

Both head variants share one fusion recipe: per-level visual features are
summed across the visible (RGB) and thermal (IR) streams, text tokens are
concatenated (RGB block first), and class logits take the element-wise
maximum of the similarities against each stream's enhanced text tokens,
so the stronger modality wins per class and position.

``msgdino`` selects the most text-relevant spatial positions as object
queries, refines them through a cross-modality decoder, and regresses
boxes with an MLP. ``msyolow`` predicts a box and per-token logits at
every position of the fused multi-scale grid with a per-position linear
head (a 1x1 convolution over the flattened grid).

Each modality is first enhanced by one vision-language encoder block:
visual self-attention per level, image-to-text cross-attention updating
the text tokens, text-to-image cross-attention updating the visual
tokens, then a feed-forward sub-block per stream. Every sub-block is
residual (x + block(x)) followed by layer normalization; ``normalize=False``
switches all norms off so that zero weights reduce every stage to the
identity, which the tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import BBox, Detection
from .kernel import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat_rows,
    elementwise_max,
    grad_elementwise_max,
    layer_norm,
    matmul,
    relu,
    reshape,
    scaled_dot_attention,
    sigmoid,
    transpose,
)
from . import tensorio

__all__ = [
    "RGB",
    "IR",
    "FUSED",
    "ModalityFeatures",
    "TextEmbeddings",
    "QueryProvenance",
    "QuerySet",
    "LevelPredictions",
    "HeadWeights",
    "encode_modality",
    "fuse_visual",
    "fuse_text",
    "affinity",
    "modality_affinity",
    "select_queries",
    "decoder_layer",
    "run_decoder",
    "box_head",
    "decode_boxes",
    "class_logits_query",
    "pool_class_logits",
    "grad_max_fused_logits",
    "conv_head",
    "forward_msgdino",
    "forward_msyolow",
    "zero_head_weights",
    "random_head_weights",
    "random_modality_features",
    "random_text_embeddings",
    "load_modality_features",
    "save_modality_features",
    "load_text_embeddings",
    "save_text_embeddings",
    "load_head_weights",
    "save_head_weights",
]

RGB = "RGB"
IR = "IR"
FUSED = "FUSED"

_ATTN_PARTS = ("wq", "wk", "wv", "wo")
_FFN_PARTS = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class ModalityFeatures:
    """Flattened multi-scale feature maps for one stream.

    Level l is a (H_l * W_l) x d tensor in row-major spatial order with
    its grid recorded in ``level_shapes``.
    """

    modality: str
    levels: tuple[Tensor, ...]
    level_shapes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.modality not in (RGB, IR, FUSED):
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.levels:
            raise ValueError("at least one feature level is required")
        if len(self.levels) != len(self.level_shapes):
            raise ValueError("levels and level_shapes must align")
        width = self.levels[0].shape[1]
        for t, (h, w) in zip(self.levels, self.level_shapes):
            if len(t.shape) != 2 or t.shape[0] != h * w:
                raise ShapeError(f"level tensor {t.shape} does not match grid {h}x{w}")
            if t.shape[1] != width:
                raise ShapeError(f"level widths differ: {t.shape[1]} vs {width}")

    @property
    def width(self) -> int:
        return self.levels[0].shape[1]

    @property
    def total_rows(self) -> int:
        return sum(t.shape[0] for t in self.levels)

    def stacked(self) -> Tensor:
        out = self.levels[0]
        for t in self.levels[1:]:
            out = concat_rows(out, t)
        return out


@dataclass(frozen=True)
class TextEmbeddings:
    """Prompt-token embeddings with a token-to-class map.

    Classes appear as contiguous token blocks; every class owns at least
    one token. ``token_modalities`` is set on fused embeddings to record
    which stream each row came from.
    """

    tokens: Tensor
    token_classes: tuple[str, ...]
    token_modalities: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.tokens.shape) != 2:
            raise ShapeError(f"token tensor must be 2-D, got {self.tokens.shape}")
        if len(self.token_classes) != self.tokens.shape[0]:
            raise ValueError(
                f"token_classes length {len(self.token_classes)} does not match "
                f"{self.tokens.shape[0]} tokens"
            )
        if self.token_modalities is not None and len(self.token_modalities) != self.tokens.shape[0]:
            raise ValueError("token_modalities must align with tokens")

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    def class_names(self) -> tuple[str, ...]:
        seen: list[str] = []
        for name in self.token_classes:
            if name not in seen:
                seen.append(name)
        return tuple(seen)


@dataclass(frozen=True)
class QueryProvenance:
    modality: str
    level: int
    spatial_index: int
    score: float


@dataclass(frozen=True)
class QuerySet:
    queries: Tensor
    provenance: tuple[QueryProvenance, ...]

    def __post_init__(self):
        if len(self.provenance) != self.queries.shape[0]:
            raise ValueError("provenance must have one entry per query")
        scores = [p.score for p in self.provenance]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("selection scores must be non-increasing")


@dataclass(frozen=True)
class LevelPredictions:
    """Per-level dense head output: boxes (H x W x 4) and logits (H x W x N_t)."""

    boxes: Tensor
    logits: Tensor


class HeadWeights:
    """Named weight tensors plus the hyperparameters that shape them.

    Required entries, all width d:
      enh.{rgb,ir}.{self_attn,i2t,t2i}.{wq,wk,wv,wo}
      enh.{rgb,ir}.{ffn_v,ffn_t}.{w1,b1,w2,b2}
      dec.{0..J-1}.{self_attn,cross_v,cross_t}.{wq,wk,wv,wo}
      dec.{0..J-1}.ffn.{w1,b1,w2,b2}
      box_mlp.{w1,b1,w2,b2,w3,b3}
      conv_box.{w,b}
    plus 1-element hyperparameter tensors hyper.{d,j,n_q,l}.
    """

    def __init__(self, width: int, num_layers: int, num_queries: int, num_levels: int,
                 tensors: Mapping[str, Tensor]):
        if min(width, num_layers, num_queries, num_levels) < 1:
            raise ValueError("hyperparameters d, J, N_q, L must all be >= 1")
        self.width = int(width)
        self.num_layers = int(num_layers)
        self.num_queries = int(num_queries)
        self.num_levels = int(num_levels)
        self._tensors = dict(tensors)
        self._validate()

    def tensor(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"missing weight tensor {name!r}") from None

    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def _validate(self) -> None:
        d = self.width
        for name in self._required_attention_names():
            t = self.tensor(name)
            if t.shape != (d, d):
                raise ShapeError(f"{name}: expected shape {(d, d)}, got {t.shape}")
        for prefix in self._ffn_prefixes():
            w1 = self.tensor(f"{prefix}.w1")
            if len(w1.shape) != 2 or w1.shape[0] != d:
                raise ShapeError(f"{prefix}.w1: expected (d, hidden) with d={d}, got {w1.shape}")
            hidden = w1.shape[1]
            for name, shape in ((f"{prefix}.b1", (hidden,)),
                                (f"{prefix}.w2", (hidden, d)),
                                (f"{prefix}.b2", (d,))):
                t = self.tensor(name)
                if t.shape != shape:
                    raise ShapeError(f"{name}: expected shape {shape}, got {t.shape}")
        for name, shape in (("box_mlp.w1", (d, d)), ("box_mlp.b1", (d,)),
                            ("box_mlp.w2", (d, d)), ("box_mlp.b2", (d,)),
                            ("box_mlp.w3", (d, 4)), ("box_mlp.b3", (4,)),
                            ("conv_box.w", (d, 4)), ("conv_box.b", (4,))):
            t = self.tensor(name)
            if t.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {t.shape}")

    def _required_attention_names(self) -> list[str]:
        names = []
        for m in ("rgb", "ir"):
            for blk in ("self_attn", "i2t", "t2i"):
                names += [f"enh.{m}.{blk}.{p}" for p in _ATTN_PARTS]
        for j in range(self.num_layers):
            for blk in ("self_attn", "cross_v", "cross_t"):
                names += [f"dec.{j}.{blk}.{p}" for p in _ATTN_PARTS]
        return names

    def _ffn_prefixes(self) -> list[str]:
        prefixes = [f"enh.{m}.{f}" for m in ("rgb", "ir") for f in ("ffn_v", "ffn_t")]
        prefixes += [f"dec.{j}.ffn" for j in range(self.num_layers)]
        return prefixes


def _check_width(width: int, w: HeadWeights, op: str) -> None:
    if width != w.width:
        raise ShapeError(f"{op}: feature width {width} does not match weights d={w.width}")


def _attention_block(w: HeadWeights, prefix: str, queries: Tensor, memory: Tensor) -> Tensor:
    q = matmul(queries, w.tensor(f"{prefix}.wq"))
    k = matmul(memory, w.tensor(f"{prefix}.wk"))
    v = matmul(memory, w.tensor(f"{prefix}.wv"))
    return matmul(scaled_dot_attention(q, k, v), w.tensor(f"{prefix}.wo"))


def _ffn_block(w: HeadWeights, prefix: str, x: Tensor) -> Tensor:
    hidden = relu(add_bias(matmul(x, w.tensor(f"{prefix}.w1")), w.tensor(f"{prefix}.b1")))
    return add_bias(matmul(hidden, w.tensor(f"{prefix}.w2")), w.tensor(f"{prefix}.b2"))


def _residual(x: Tensor, delta: Tensor, normalize: bool) -> Tensor:
    out = add(x, delta)
    return layer_norm(out) if normalize else out


def encode_modality(
    features: ModalityFeatures,
    text: TextEmbeddings,
    weights: HeadWeights,
    normalize: bool = True,
) -> tuple[ModalityFeatures, TextEmbeddings]:
    """One vision-language enhancer block for a single stream.

    Returns updated features and stream-conditioned text tokens with
    unchanged shapes.
    """
    if features.modality not in (RGB, IR):
        raise ValueError(f"encode_modality expects an RGB or IR stream, got {features.modality}")
    _check_width(features.width, weights, "encode_modality")
    _check_width(text.width, weights, "encode_modality")
    prefix = "enh.rgb" if features.modality == RGB else "enh.ir"

    levels = [
        _residual(f, _attention_block(weights, f"{prefix}.self_attn", f, f), normalize)
        for f in features.levels
    ]
    visual_memory = levels[0]
    for t in levels[1:]:
        visual_memory = concat_rows(visual_memory, t)
    tokens = _residual(
        text.tokens,
        _attention_block(weights, f"{prefix}.i2t", text.tokens, visual_memory),
        normalize,
    )
    levels = [
        _residual(f, _attention_block(weights, f"{prefix}.t2i", f, tokens), normalize)
        for f in levels
    ]
    levels = [
        _residual(f, _ffn_block(weights, f"{prefix}.ffn_v", f), normalize)
        for f in levels
    ]
    tokens = _residual(tokens, _ffn_block(weights, f"{prefix}.ffn_t", tokens), normalize)

    return (
        replace(features, levels=tuple(levels)),
        TextEmbeddings(tokens, text.token_classes, text.token_modalities),
    )


def fuse_visual(a: ModalityFeatures, b: ModalityFeatures) -> ModalityFeatures:
    """Element-wise sum of two streams, level by level."""
    if a.level_shapes != b.level_shapes:
        raise ShapeError(f"fuse_visual: level grids differ: {a.level_shapes} vs {b.level_shapes}")
    levels = tuple(add(x, y) for x, y in zip(a.levels, b.levels))
    return ModalityFeatures(FUSED, levels, a.level_shapes)


def fuse_text(a: TextEmbeddings, b: TextEmbeddings) -> TextEmbeddings:
    """Row concatenation of two token sets, first operand's block first."""
    if a.width != b.width:
        raise ShapeError(f"fuse_text: widths differ: {a.width} vs {b.width}")
    modalities = (RGB,) * a.num_tokens + (IR,) * b.num_tokens
    return TextEmbeddings(
        concat_rows(a.tokens, b.tokens),
        a.token_classes + b.token_classes,
        modalities,
    )


def affinity(level: Tensor, text: TextEmbeddings) -> Tensor:
    """Unscaled similarity between one level's rows and the text tokens."""
    if level.shape[1] != text.width:
        raise ShapeError(f"affinity: widths differ: {level.shape} vs {text.tokens.shape}")
    return matmul(level, transpose(text.tokens))


def modality_affinity(features: ModalityFeatures, text: TextEmbeddings) -> Tensor:
    """Similarities for every level of a stream, concatenated over rows."""
    out = affinity(features.levels[0], text)
    for level in features.levels[1:]:
        out = concat_rows(out, affinity(level, text))
    return out


def _decode_flat_index(features: ModalityFeatures, flat: int) -> tuple[int, int]:
    offset = 0
    for level, t in enumerate(features.levels):
        if flat < offset + t.shape[0]:
            return level, flat - offset
        offset += t.shape[0]
    raise IndexError(f"flat index {flat} outside {features.total_rows} rows")


def select_queries(
    s_rgb: Tensor,
    s_ir: Tensor,
    f_rgb: ModalityFeatures,
    f_ir: ModalityFeatures,
    n_q: int,
) -> QuerySet:
    """Pick the n_q positions with the strongest text affinity.

    Rows are the RGB levels in order followed by the IR levels; a row's
    score is its maximum over the text dimension. Ties resolve to the
    lower concatenated index. Provenance decodes each pick back to
    (modality, level, spatial index).
    """
    if s_rgb.shape[0] != f_rgb.total_rows:
        raise ShapeError(
            f"select_queries: RGB affinity rows {s_rgb.shape[0]} do not cover "
            f"{f_rgb.total_rows} feature rows"
        )
    if s_ir.shape[0] != f_ir.total_rows:
        raise ShapeError(
            f"select_queries: IR affinity rows {s_ir.shape[0]} do not cover "
            f"{f_ir.total_rows} feature rows"
        )
    if s_rgb.shape[1] != s_ir.shape[1]:
        raise ShapeError(f"select_queries: token counts differ: {s_rgb.shape} vs {s_ir.shape}")
    total = s_rgb.shape[0] + s_ir.shape[0]
    if not (1 <= n_q <= total):
        raise ValueError(f"n_q must lie in [1, {total}], got {n_q}")

    row_scores = np.concatenate([
        s_rgb.array.max(axis=1),
        s_ir.array.max(axis=1),
    ])
    order = sorted(range(total), key=lambda i: (-row_scores[i], i))[:n_q]

    rgb_rows = s_rgb.shape[0]
    rows = []
    provenance = []
    for flat in order:
        if flat < rgb_rows:
            source, modality, local = f_rgb, RGB, flat
        else:
            source, modality, local = f_ir, IR, flat - rgb_rows
        level, spatial = _decode_flat_index(source, local)
        rows.append(source.levels[level].array[spatial])
        provenance.append(QueryProvenance(
            modality=modality,
            level=level,
            spatial_index=spatial,
            score=float(row_scores[flat]),
        ))
    return QuerySet(Tensor(np.stack(rows)), tuple(provenance))


def decoder_layer(
    queries: Tensor,
    fused_visual: ModalityFeatures,
    fused_text: TextEmbeddings,
    weights: HeadWeights,
    layer: int,
    normalize: bool = True,
) -> Tensor:
    """One cross-modality decoder layer.

    Self-attention, cross-attention to the fused visual rows, cross-
    attention to the fused text tokens, then a feed-forward sub-block;
    each is residual with post-norm (skipped when ``normalize`` is off).
    """
    if not (0 <= layer < weights.num_layers):
        raise ValueError(f"layer must lie in [0, {weights.num_layers}), got {layer}")
    _check_width(queries.shape[1], weights, "decoder_layer")
    _check_width(fused_visual.width, weights, "decoder_layer")
    _check_width(fused_text.width, weights, "decoder_layer")
    prefix = f"dec.{layer}"
    x = _residual(queries, _attention_block(weights, f"{prefix}.self_attn", queries, queries), normalize)
    x = _residual(x, _attention_block(weights, f"{prefix}.cross_v", x, fused_visual.stacked()), normalize)
    x = _residual(x, _attention_block(weights, f"{prefix}.cross_t", x, fused_text.tokens), normalize)
    x = _residual(x, _ffn_block(weights, f"{prefix}.ffn", x), normalize)
    return x


def run_decoder(
    queries: Tensor,
    fused_visual: ModalityFeatures,
    fused_text: TextEmbeddings,
    weights: HeadWeights,
    normalize: bool = True,
) -> Tensor:
    x = queries
    for j in range(weights.num_layers):
        x = decoder_layer(x, fused_visual, fused_text, weights, j, normalize)
    return x


def box_head(q_out: Tensor, weights: HeadWeights) -> Tensor:
    """Three-layer box MLP; sigmoid output is (cx, cy, w, h) in [0, 1]^4."""
    _check_width(q_out.shape[1], weights, "box_head")
    x = relu(add_bias(matmul(q_out, weights.tensor("box_mlp.w1")), weights.tensor("box_mlp.b1")))
    x = relu(add_bias(matmul(x, weights.tensor("box_mlp.w2")), weights.tensor("box_mlp.b2")))
    x = add_bias(matmul(x, weights.tensor("box_mlp.w3")), weights.tensor("box_mlp.b3"))
    return sigmoid(x)


def decode_boxes(normalized: Tensor, image_size: tuple[int, int]) -> list[BBox]:
    """Map normalized (cx, cy, w, h) rows to corner-form pixel boxes."""
    if len(normalized.shape) != 2 or normalized.shape[1] != 4:
        raise ShapeError(f"decode_boxes: expected (n, 4), got {normalized.shape}")
    width, height = image_size
    boxes = []
    for cx, cy, w, h in normalized.array:
        boxes.append(BBox(
            (cx - w / 2.0) * width,
            (cy - h / 2.0) * height,
            (cx + w / 2.0) * width,
            (cy + h / 2.0) * height,
        ))
    return boxes


def class_logits_query(q_out: Tensor, t_rgb: TextEmbeddings, t_ir: TextEmbeddings) -> Tensor:
    """Per-token logits for decoder queries: max over the two streams."""
    if t_rgb.num_tokens != t_ir.num_tokens:
        raise ShapeError(
            f"class_logits_query: token counts differ: {t_rgb.num_tokens} vs {t_ir.num_tokens}"
        )
    logits_rgb = matmul(q_out, transpose(t_rgb.tokens))
    logits_ir = matmul(q_out, transpose(t_ir.tokens))
    fused, _ = elementwise_max(logits_rgb, logits_ir)
    return fused


def pool_class_logits(token_logits: Tensor, token_classes: Sequence[str]) -> tuple[Tensor, tuple[str, ...]]:
    """Reduce token logits to per-class logits by max over each class's tokens.

    Classes are ordered by first appearance in ``token_classes``.
    """
    if token_logits.shape[1] != len(token_classes):
        raise ShapeError(
            f"pool_class_logits: {token_logits.shape[1]} columns vs "
            f"{len(token_classes)} token classes"
        )
    names: list[str] = []
    for name in token_classes:
        if name not in names:
            names.append(name)
    columns = []
    for name in names:
        idx = [i for i, c in enumerate(token_classes) if c == name]
        columns.append(token_logits.array[:, idx].max(axis=1))
    return Tensor(np.stack(columns, axis=1)), tuple(names)


def grad_max_fused_logits(
    q_out: Tensor,
    t_rgb: TextEmbeddings,
    t_ir: TextEmbeddings,
    upstream: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """Input gradients of the max-fused query logits, routed by winner."""
    logits_rgb = matmul(q_out, transpose(t_rgb.tokens))
    logits_ir = matmul(q_out, transpose(t_ir.tokens))
    _, mask = elementwise_max(logits_rgb, logits_ir)
    up_rgb, up_ir = grad_elementwise_max(mask, upstream)
    dq = add(matmul(up_rgb, t_rgb.tokens), matmul(up_ir, t_ir.tokens))
    dt_rgb = matmul(transpose(up_rgb), q_out)
    dt_ir = matmul(transpose(up_ir), q_out)
    return dq, dt_rgb, dt_ir


def conv_head(
    fused: ModalityFeatures,
    t_rgb: TextEmbeddings,
    t_ir: TextEmbeddings,
    weights: HeadWeights,
) -> list[LevelPredictions]:
    """Dense per-position predictions on the fused grid.

    Boxes come from a per-position linear map d -> 4 with sigmoid; logits
    are the max-fused similarities against each stream's text tokens.
    """
    _check_width(fused.width, weights, "conv_head")
    if t_rgb.num_tokens != t_ir.num_tokens:
        raise ShapeError(
            f"conv_head: token counts differ: {t_rgb.num_tokens} vs {t_ir.num_tokens}"
        )
    out = []
    for level, (h, w) in zip(fused.levels, fused.level_shapes):
        raw = add_bias(matmul(level, weights.tensor("conv_box.w")), weights.tensor("conv_box.b"))
        boxes = reshape(sigmoid(raw), (h, w, 4))
        logits = reshape(class_logits_query(level, t_rgb, t_ir), (h, w, t_rgb.num_tokens))
        out.append(LevelPredictions(boxes=boxes, logits=logits))
    return out


def _category_ids(class_names: Sequence[str], category_ids: Mapping[str, int] | None) -> dict[str, int]:
    if category_ids is None:
        return {name: i + 1 for i, name in enumerate(class_names)}
    missing = [name for name in class_names if name not in category_ids]
    if missing:
        raise KeyError(f"no category ids for classes {missing}")
    return {name: int(category_ids[name]) for name in class_names}


def _detections_from_rows(
    boxes_norm: Tensor,
    pooled_logits: Tensor,
    class_names: Sequence[str],
    image_id: int,
    image_size: tuple[int, int],
    id_map: Mapping[str, int],
) -> list[Detection]:
    boxes = decode_boxes(boxes_norm, image_size)
    scores = sigmoid(pooled_logits).array
    best = pooled_logits.array.argmax(axis=1)  # ties resolve to the lower class index
    detections = []
    for row, box in enumerate(boxes):
        cls = int(best[row])
        detections.append(Detection(
            box=box,
            score=float(scores[row, cls]),
            class_id=id_map[class_names[cls]],
            image_id=image_id,
        ))
    return detections


def forward_msgdino(
    rgb: ModalityFeatures,
    ir: ModalityFeatures,
    text: TextEmbeddings,
    weights: HeadWeights,
    image_id: int = 1,
    image_size: tuple[int, int] = (640, 512),
    category_ids: Mapping[str, int] | None = None,
    normalize: bool = True,
) -> list[Detection]:
    """Query-based head: one detection per selected object query."""
    enc_rgb, text_rgb = encode_modality(rgb, text, weights, normalize)
    enc_ir, text_ir = encode_modality(ir, text, weights, normalize)
    s_rgb = modality_affinity(enc_rgb, text_rgb)
    s_ir = modality_affinity(enc_ir, text_ir)
    queries = select_queries(s_rgb, s_ir, enc_rgb, enc_ir, weights.num_queries)
    fused_visual = fuse_visual(enc_rgb, enc_ir)
    fused_text = fuse_text(text_rgb, text_ir)
    q_out = run_decoder(queries.queries, fused_visual, fused_text, weights, normalize)
    boxes_norm = box_head(q_out, weights)
    pooled, class_names = pool_class_logits(
        class_logits_query(q_out, text_rgb, text_ir), text.token_classes
    )
    id_map = _category_ids(class_names, category_ids)
    return _detections_from_rows(boxes_norm, pooled, class_names, image_id, image_size, id_map)


def forward_msyolow(
    rgb: ModalityFeatures,
    ir: ModalityFeatures,
    text: TextEmbeddings,
    weights: HeadWeights,
    image_id: int = 1,
    image_size: tuple[int, int] = (640, 512),
    category_ids: Mapping[str, int] | None = None,
    normalize: bool = True,
) -> list[Detection]:
    """Convolutional head: one detection per grid position per level."""
    enc_rgb, text_rgb = encode_modality(rgb, text, weights, normalize)
    enc_ir, text_ir = encode_modality(ir, text, weights, normalize)
    fused_visual = fuse_visual(enc_rgb, enc_ir)
    predictions = conv_head(fused_visual, text_rgb, text_ir, weights)
    detections: list[Detection] = []
    id_map: Mapping[str, int] | None = None
    for preds, (h, w) in zip(predictions, fused_visual.level_shapes):
        boxes_norm = reshape(preds.boxes, (h * w, 4))
        token_logits = reshape(preds.logits, (h * w, text.num_tokens))
        pooled, class_names = pool_class_logits(token_logits, text.token_classes)
        if id_map is None:
            id_map = _category_ids(class_names, category_ids)
        detections.extend(_detections_from_rows(
            boxes_norm, pooled, class_names, image_id, image_size, id_map
        ))
    return detections


def _zero(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


def _weight_shapes(width: int, num_layers: int, hidden: int) -> dict[str, tuple[int, ...]]:
    d = width
    shapes: dict[str, tuple[int, ...]] = {}
    for m in ("rgb", "ir"):
        for blk in ("self_attn", "i2t", "t2i"):
            for p in _ATTN_PARTS:
                shapes[f"enh.{m}.{blk}.{p}"] = (d, d)
        for f in ("ffn_v", "ffn_t"):
            shapes[f"enh.{m}.{f}.w1"] = (d, hidden)
            shapes[f"enh.{m}.{f}.b1"] = (hidden,)
            shapes[f"enh.{m}.{f}.w2"] = (hidden, d)
            shapes[f"enh.{m}.{f}.b2"] = (d,)
    for j in range(num_layers):
        for blk in ("self_attn", "cross_v", "cross_t"):
            for p in _ATTN_PARTS:
                shapes[f"dec.{j}.{blk}.{p}"] = (d, d)
        shapes[f"dec.{j}.ffn.w1"] = (d, hidden)
        shapes[f"dec.{j}.ffn.b1"] = (hidden,)
        shapes[f"dec.{j}.ffn.w2"] = (hidden, d)
        shapes[f"dec.{j}.ffn.b2"] = (d,)
    shapes.update({
        "box_mlp.w1": (d, d), "box_mlp.b1": (d,),
        "box_mlp.w2": (d, d), "box_mlp.b2": (d,),
        "box_mlp.w3": (d, 4), "box_mlp.b3": (4,),
        "conv_box.w": (d, 4), "conv_box.b": (4,),
    })
    return shapes


def zero_head_weights(
    width: int = 8,
    num_layers: int = 2,
    num_queries: int = 6,
    num_levels: int = 2,
    hidden: int | None = None,
) -> HeadWeights:
    """All-zero weights; with ``normalize=False`` every stage is the identity."""
    hidden = 2 * width if hidden is None else hidden
    tensors = {name: _zero(shape) for name, shape in
               _weight_shapes(width, num_layers, hidden).items()}
    return HeadWeights(width, num_layers, num_queries, num_levels, tensors)


def random_head_weights(
    seed: int,
    width: int = 8,
    num_layers: int = 2,
    num_queries: int = 6,
    num_levels: int = 2,
    hidden: int | None = None,
    scale: float = 0.15,
) -> HeadWeights:
    hidden = 2 * width if hidden is None else hidden
    rng = np.random.default_rng(seed)
    tensors = {
        name: Tensor(scale * rng.standard_normal(shape))
        for name, shape in _weight_shapes(width, num_layers, hidden).items()
    }
    return HeadWeights(width, num_layers, num_queries, num_levels, tensors)


def random_modality_features(
    seed: int,
    modality: str,
    level_shapes: Sequence[tuple[int, int]] = ((4, 4), (2, 2)),
    width: int = 8,
    scale: float = 1.0,
) -> ModalityFeatures:
    rng = np.random.default_rng(seed)
    levels = tuple(Tensor(scale * rng.standard_normal((h * w, width))) for h, w in level_shapes)
    return ModalityFeatures(modality, levels, tuple((h, w) for h, w in level_shapes))


def random_text_embeddings(
    seed: int,
    tokens_per_class: Mapping[str, int] | None = None,
    width: int = 8,
    scale: float = 1.0,
) -> TextEmbeddings:
    if tokens_per_class is None:
        tokens_per_class = {"person": 2, "car": 1, "bicycle": 1}
    rng = np.random.default_rng(seed)
    classes: list[str] = []
    for name, count in tokens_per_class.items():
        classes.extend([name] * count)
    return TextEmbeddings(Tensor(scale * rng.standard_normal((len(classes), width))), tuple(classes))


def save_modality_features(features: ModalityFeatures, path: str | Path) -> None:
    """Store each level as a 3-D (H, W, d) entry named level_<i>."""
    tensors = {}
    for i, (t, (h, w)) in enumerate(zip(features.levels, features.level_shapes)):
        tensors[f"level_{i}"] = reshape(t, (h, w, t.shape[1]))
    tensorio.write_named_tensors(path, tensors)


def load_modality_features(path: str | Path, modality: str) -> ModalityFeatures:
    tensors = tensorio.read_named_tensors(path)
    levels: list[Tensor] = []
    shapes: list[tuple[int, int]] = []
    for i in range(len(tensors)):
        name = f"level_{i}"
        if name not in tensors:
            raise tensorio.FixtureFormatError(f"{name}: missing feature level entry")
        t = tensors[name]
        if len(t.shape) != 3:
            raise tensorio.FixtureFormatError(f"{name}: expected a 3-D (H, W, d) tensor, got {t.shape}")
        h, w, d = t.shape
        levels.append(reshape(t, (h * w, d)))
        shapes.append((h, w))
    if not levels:
        raise tensorio.FixtureFormatError("level_0: container holds no feature levels")
    return ModalityFeatures(modality, tuple(levels), tuple(shapes))


def save_text_embeddings(text: TextEmbeddings, path: str | Path) -> None:
    """Store one (tokens, d) entry per class block, named class/<name>."""
    blocks: dict[str, list[int]] = {}
    order: list[str] = []
    for i, name in enumerate(text.token_classes):
        if name not in blocks:
            blocks[name] = []
            order.append(name)
        blocks[name].append(i)
    tensors = {}
    for name in order:
        idx = blocks[name]
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError(f"class {name!r} tokens are not contiguous; cannot serialize")
        tensors[f"class/{name}"] = Tensor(text.tokens.array[idx])
    tensorio.write_named_tensors(path, tensors)


def load_text_embeddings(path: str | Path) -> TextEmbeddings:
    tensors = tensorio.read_named_tensors(path)
    if not tensors:
        raise tensorio.FixtureFormatError("container holds no class entries")
    rows = []
    classes: list[str] = []
    for name, t in tensors.items():
        if not name.startswith("class/") or len(name) <= len("class/"):
            raise tensorio.FixtureFormatError(f"{name}: expected entries named class/<name>")
        if len(t.shape) != 2:
            raise tensorio.FixtureFormatError(f"{name}: expected a 2-D (tokens, d) tensor, got {t.shape}")
        cls = name[len("class/"):]
        rows.append(t.array)
        classes.extend([cls] * t.shape[0])
    return TextEmbeddings(Tensor(np.concatenate(rows, axis=0)), tuple(classes))


def save_head_weights(weights: HeadWeights, path: str | Path) -> None:
    tensors: dict[str, Tensor] = {
        "hyper.d": Tensor([float(weights.width)]),
        "hyper.j": Tensor([float(weights.num_layers)]),
        "hyper.n_q": Tensor([float(weights.num_queries)]),
        "hyper.l": Tensor([float(weights.num_levels)]),
    }
    for name in weights.names():
        tensors[name] = weights.tensor(name)
    tensorio.write_named_tensors(path, tensors)


def load_head_weights(path: str | Path) -> HeadWeights:
    tensors = tensorio.read_named_tensors(path)
    hyper = {}
    for key in ("d", "j", "n_q", "l"):
        name = f"hyper.{key}"
        if name not in tensors:
            raise tensorio.FixtureFormatError(f"{name}: missing hyperparameter entry")
        t = tensors.pop(name)
        value = float(t.array.reshape(-1)[0])
        if t.size != 1 or value != int(value) or value < 1:
            raise tensorio.FixtureFormatError(f"{name}: expected a single positive integer value")
        hyper[key] = int(value)
    return HeadWeights(hyper["d"], hyper["j"], hyper["n_q"], hyper["l"], tensors)
