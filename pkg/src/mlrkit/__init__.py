"""Multi-label recognition with partial annotations.

Core pipeline: feature maps -> dual-logit scoring heads -> spatial softmax
aggregation -> pair probabilities -> asymmetric loss, trained with SGD and
evaluated by mean average precision.  Plus two diagnostic tools: a caption
negation scanner and prompt-embedding similarity statistics.
"""

from .aggregation import (AttentionMaps, PredictionPair, aggregate,
                          attention_maps, export_similarity_map,
                          pair_probability)
from .data import (DatasetBundle, LabelMatrix, MaskSpec, generate_synthetic,
                   mask_labels, read_bundle, read_label_csv, read_tensor_file,
                   write_bundle, write_label_csv, write_tensor_file)
from .heads import (EmbeddingBank, FeatureMap, ProjectorHead, SpatialLogits,
                    embedding_forward, head_forward, load_head,
                    make_free_dual, make_negativecoop, make_positivecoop,
                    projector_forward, save_head)
from .loss import LossConfig, asl_grad, asl_term, batch_loss
from .metrics import average_precision, mean_average_precision
from .numerics import Rng, Tensor, cosine_similarity, l2_normalize, softmax_flat
from .train import TrainConfig, cosine_lr, sgd_step, train_run

__version__ = "0.1.0"
