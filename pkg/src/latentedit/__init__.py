"""latentedit: instruction-driven latent-space image editing.

Pipeline: embed the instruction, retrieve the most/least similar corpus
images, train a linear SVM on their embeddings, take the hyperplane normal
as the edit direction, project it onto precomputed per-channel directions,
and apply the sparse result to the source image's style vector.
"""

from .backends import (
    Backend,
    BackendDescriptor,
    RemoteBackend,
    SyntheticBackend,
    SyntheticBackendConfig,
)
from .bench import BenchReport, run_bench
from .channels import (
    ChannelDirectionMatrix,
    StyleStatistics,
    compute_channel_directions,
    compute_style_statistics,
    load_channel_directions,
    save_channel_directions,
)
from .directions import (
    EditTextDirection,
    PromptBank,
    default_prompt_bank,
    load_prompt_bank,
    neutral_diff_direction,
    svm_direction,
)
from .engine import EditEngine
from .errors import (
    DivergentNormalization,
    EditEngineError,
)
from .mapper import (
    EditRequest,
    EditResult,
    StyleEditDirection,
    apply_edit,
    grid_values,
    invert_image,
    map_direction,
    sweep,
)
from .store import CorpusIndex, load_index, retrieve, save_index
from .svm import Hyperplane, LabeledEmbeddingSet, LinearHingeSVM, train_svm

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendDescriptor",
    "BenchReport",
    "ChannelDirectionMatrix",
    "CorpusIndex",
    "DivergentNormalization",
    "EditEngine",
    "EditEngineError",
    "EditRequest",
    "EditResult",
    "EditTextDirection",
    "Hyperplane",
    "LabeledEmbeddingSet",
    "LinearHingeSVM",
    "PromptBank",
    "RemoteBackend",
    "StyleEditDirection",
    "StyleStatistics",
    "SyntheticBackend",
    "SyntheticBackendConfig",
    "apply_edit",
    "compute_channel_directions",
    "compute_style_statistics",
    "default_prompt_bank",
    "grid_values",
    "invert_image",
    "load_channel_directions",
    "load_index",
    "load_prompt_bank",
    "map_direction",
    "neutral_diff_direction",
    "retrieve",
    "run_bench",
    "save_channel_directions",
    "save_index",
    "svm_direction",
    "sweep",
    "train_svm",
]
