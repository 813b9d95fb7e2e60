from .base import (
    ALL_CAPABILITIES,
    Backend,
    BackendDescriptor,
    CAP_EMBED_IMAGE,
    CAP_EMBED_TEXT,
    CAP_GENERATE,
    CAP_INVERT,
)
from .remote import RemoteBackend
from .synthetic import (
    MIXING_AXIS,
    MIXING_ORTHONORMAL,
    SyntheticBackend,
    SyntheticBackendConfig,
)

__all__ = [
    "ALL_CAPABILITIES",
    "Backend",
    "BackendDescriptor",
    "CAP_EMBED_IMAGE",
    "CAP_EMBED_TEXT",
    "CAP_GENERATE",
    "CAP_INVERT",
    "MIXING_AXIS",
    "MIXING_ORTHONORMAL",
    "RemoteBackend",
    "SyntheticBackend",
    "SyntheticBackendConfig",
]
