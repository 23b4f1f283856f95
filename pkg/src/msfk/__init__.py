"""msfk: desk-scale multispectral vision-language detection components.

A numpy library covering two fusion detection heads on tensor fixtures,
adaptive pseudo-labeling, deterministic few-shot support-set sampling,
and COCO-style evaluation, plus binary fixture formats and a batch CLI.
"""

from .kernel import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat_rows,
    elementwise_max,
    finite_diff_grad,
    layer_norm,
    matmul,
    relu,
    reshape,
    scaled_dot_attention,
    sigmoid,
    softmax_rows,
    transpose,
)
from .geometry import BBox, Detection, GroundTruth, class_nms, iou
from .datasets import (
    Annotation,
    Category,
    Dataset,
    DatasetWarning,
    FewShotSplit,
    ImageRecord,
    IntegrityError,
    ParseError,
    ground_truths,
    load_coco,
    load_detections,
    load_split,
    merge_pseudo_labels,
    sample_few_shot,
    save_coco,
    save_detections,
    save_split,
    subset_by_images,
)
from .fusion import (
    HeadWeights,
    ModalityFeatures,
    QueryProvenance,
    QuerySet,
    TextEmbeddings,
    affinity,
    box_head,
    class_logits_query,
    conv_head,
    decode_boxes,
    decoder_layer,
    encode_modality,
    forward_msgdino,
    forward_msyolow,
    fuse_text,
    fuse_visual,
    select_queries,
)
from .pseudolabel import (
    PseudoLabelConfig,
    ScoreStats,
    adaptive_threshold,
    generate_pseudo_labels,
    label_dataset,
    score_stats,
)
from .evaluation import EvalConfig, EvalReport, average_precision, evaluate, match_detections
from .tensorio import FixtureFormatError, read_named_tensors, read_tensor, write_named_tensors, write_tensor

__version__ = "0.1.0"
