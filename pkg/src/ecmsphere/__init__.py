"""Contrastive circular emotion geometry on the unit hypersphere.

The package trains small projection heads (a standard Transformer block and
a normalized, sphere-constrained variant) with three contrastive objectives
that place emotion labels on a circle, and evaluates the resulting
embedding spaces with spherical clustering, circle-alignment correlation
and spectral projections.
"""

__version__ = "0.1.0"

from . import autodiff, data, ecm, heads, losses, metrics, report, training  # noqa: F401
from .autodiff import GradCheckReport, Tape, Tensor, backward, grad_check  # noqa: F401
from .data import EmbeddingDataset, Record, SynthConfig, load, save, synth_generate  # noqa: F401
from .ecm import (  # noqa: F401
    EcmConfig,
    EmotionLabel,
    Polarity,
    angle_distance_steps,
    circumplex_distance,
    default_config,
    delta_theta,
    target_cosine,
)
from .heads import (  # noqa: F401
    BlockTrace,
    GptHeadParams,
    HeadConfig,
    NGptHeadParams,
    forward_with_trace,
    gpt_block_forward,
    init_gpt_params,
    init_ngpt_params,
    load_checkpoint,
    ngpt_block_forward,
    pool_and_embed,
    renormalize_weights,
    save_checkpoint,
)
from .losses import (  # noqa: F401
    LabeledBatch,
    LossConfig,
    circularcse_loss,
    sincere_loss,
    softcse_loss,
)
from .metrics import (  # noqa: F401
    ClusteringResult,
    EvalReport,
    avg_cos_sim,
    cd_r,
    evaluate_embeddings,
    mds_project,
    pca_project,
    spherical_kmeans,
    theory_check_sincere_simplex,
    v_measure,
)
from .training import TrainConfig, TrainLog, adam_step, make_batches, train  # noqa: F401
