"""Origin identification engine over encoder embeddings.

Pipeline: simulate synthetic (origin, translation) pairs - train a linear
projection with a metric loss - project and match queries against a flat
index - score mAP / top-1 - and diagnose the learned matrix spectrally.
"""

__version__ = "0.1.0"

from .embeddings import (  # noqa: F401
    EmbeddingSet,
    ProjectionMatrix,
    l2_normalize,
    load_embeddings,
    load_projection,
    project,
    save_embeddings,
    save_projection,
)
from .simulate import (  # noqa: F401
    NoiseSchedule,
    SimDataset,
    SimModelProfile,
    alpha_bar_at,
    generate_dataset,
    translate,
)
from .training import TrainConfig, train  # noqa: F401
from .matcher import FlatIndex, MatchResult, build_index, search  # noqa: F401
from .evaluation import EvalReport, evaluate, run_grid  # noqa: F401
from .spectral import (  # noqa: F401
    SpectrumReport,
    alignment_residual,
    left_inverse_check,
    singular_values,
    sv_cosine,
)
