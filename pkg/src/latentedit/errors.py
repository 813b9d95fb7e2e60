"""Exception taxonomy for the editing engine.

Every error carries an ``exit_code`` used verbatim by the CLI and mapped to
HTTP statuses by the service:

    2  usage / bad parameters
    3  divergent normalization (all style channels thresholded away)
    4  backend or capability failure
    5  io / file-format problems
"""

from __future__ import annotations


class EditEngineError(Exception):
    """Base class for all engine errors."""

    exit_code = 1
    code = "error"


class UsageError(EditEngineError):
    exit_code = 2
    code = "usage"


class KTooLarge(UsageError):
    code = "k_too_large"


class ZeroNormQuery(UsageError):
    code = "zero_norm_query"


class TooFewSamples(UsageError):
    code = "too_few_samples"


class DegenerateData(UsageError):
    code = "degenerate_data"


class ZeroDirection(UsageError):
    code = "zero_direction"


class DivergentNormalization(EditEngineError):
    """Every channel was zeroed by the sparsity threshold; the max-normalizer
    in the style mapping is undefined (beta too large for this direction)."""

    exit_code = 3
    code = "divergence"

    def __init__(self, beta: float, max_abs_dot: float):
        self.beta = beta
        self.max_abs_dot = max_abs_dot
        super().__init__(
            f"beta={beta:g} zeroes every channel "
            f"(max |channel dot| is {max_abs_dot:.6g}); normalization diverges"
        )


class AllCombinationsDiverged(DivergentNormalization):
    code = "all_combinations_diverged"

    def __init__(self, betas):
        self.beta = min(betas) if betas else float("nan")
        self.max_abs_dot = float("nan")
        Exception.__init__(
            self, f"every (alpha, beta) grid point diverged; smallest beta tried was {self.beta:g}"
        )


class BackendError(EditEngineError):
    exit_code = 4
    code = "backend"


class BackendFailure(BackendError):
    code = "backend_failure"


class CapabilityMissing(BackendError):
    code = "capability_missing"


class InversionUnsupported(CapabilityMissing):
    code = "inversion_unsupported"


class FormatError(EditEngineError):
    exit_code = 5
    code = "format"


class IoFailure(FormatError):
    code = "io_failure"


class BadMagic(FormatError):
    code = "bad_magic"


class VersionUnsupported(FormatError):
    code = "version_unsupported"


class TruncatedPayload(FormatError):
    code = "truncated_payload"


class UnsupportedDtype(FormatError):
    code = "unsupported_dtype"


class ManifestMismatch(FormatError):
    code = "manifest_mismatch"


class WrongArtifactKind(FormatError):
    code = "wrong_artifact_kind"


class FingerprintMismatch(FormatError):
    code = "fingerprint_mismatch"


class CheckpointMismatch(FormatError):
    code = "checkpoint_mismatch"


class DimensionMismatch(FormatError):
    code = "dimension_mismatch"


class DecodeError(FormatError):
    code = "decode_error"
