"""Curriculum training engine for sequence anticipation.

Training reconstructs masked future frame features under a visibility
curriculum that gradually removes auxiliary future context, then
classifies the upcoming action from the reconstructions.
"""

__version__ = "0.1.0"

from .curriculum import (  # noqa: F401
    EasinessBank,
    ScheduleSpec,
    VisibilityMask,
    global_easiness,
    reconstruction_quality,
    sample_mask,
)
from .engine import RunLog, TrainConfig, Trainer, evaluate, pretrain, run_ablation  # noqa: F401
from .gradcheck import finite_diff_check  # noqa: F401
from .objectives import HeadSet, LossWeights, consensus_predict, metrics, smoothed_ce  # noqa: F401
from .order_pretrain import gaussian_affinity, order_loss, position_accuracy  # noqa: F401
from .reasoners import (  # noqa: F401
    FeatureSequence,
    LSTMReasoner,
    ReasonerConfig,
    ReasonerOutput,
    TransformerReasoner,
    build_reasoner,
    impute_masked,
)
from .tensor import Tensor  # noqa: F401
