"""Multi-level video/language alignment: encoders for both modalities,
contrastive hinge alignment losses with hardest-negative mining, task
decoders (QA, retrieval, moment), and a training/evaluation CLI, all on
a small tape-autodiff tensor core."""

from .alignment import (
    AlignmentConfig,
    LanguageView,
    SegmentPairing,
    combined_loss,
    global_alignment_loss,
    global_similarity,
    segment_alignment_loss,
    segment_similarity,
)
from .encoders import (
    TextEncoderParams,
    TextEncoding,
    VideoEncoderParams,
    VideoEncoding,
    attention_pool,
    encode_text,
    encode_video,
)
from .gradcheck import finite_diff_check
from .optim import AdamWState, adamw_step
from .synthdata import CorpusSpec, Sample, Vocabulary, generate_corpus, read_dataset, write_dataset
from .tasks import (
    MomentDecoderParams,
    QaAnnotation,
    QaDecoderParams,
    SpanAnnotation,
    moment_logits,
    moment_loss,
    moment_predict_span,
    qa_loss,
    qa_score_candidates,
    retrieval_rank,
    tiou,
)
from .tensor import Graph, Tensor, backward
from .trainer import TrainConfig, load_checkpoint, make_batches, save_checkpoint, train, train_step

__version__ = "0.1.0"
