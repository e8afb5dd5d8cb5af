"""Exception hierarchy. Every error carries a stable machine-readable code."""


class LoopscreenError(Exception):
    """Base error; `code` is emitted on CLI stderr and in service bodies."""

    code = "error"


# imaging
class UnreadableFile(LoopscreenError):
    code = "unreadable_file"


class UnsupportedFormat(LoopscreenError):
    code = "unsupported_format"


class NoInk(LoopscreenError):
    code = "no_ink"


class TargetTooSmall(LoopscreenError):
    code = "target_too_small"


class InvalidSigma(LoopscreenError):
    code = "invalid_sigma"


class EmptyImage(LoopscreenError):
    code = "empty_image"


# augment / config
class AngleOutOfRange(LoopscreenError):
    code = "angle_out_of_range"


class BadConfig(LoopscreenError):
    code = "bad_config"


# tensor-nn
class ShapeMismatch(LoopscreenError):
    code = "shape_mismatch"


class NonFiniteTensor(LoopscreenError):
    code = "non_finite_tensor"


class NoCachedForward(LoopscreenError):
    code = "no_cached_forward"


class OddSpatialDim(LoopscreenError):
    code = "odd_spatial_dim"


class BadLabel(LoopscreenError):
    code = "bad_label"


# models / serialization
class BadMagic(LoopscreenError):
    code = "bad_magic"


class UnsupportedVersion(LoopscreenError):
    code = "unsupported_version"


class CrcMismatch(LoopscreenError):
    code = "crc_mismatch"


class SchemaMismatch(LoopscreenError):
    code = "schema_mismatch"


# dataset
class MissingClassDir(LoopscreenError):
    code = "missing_class_dir"


class EmptyClass(LoopscreenError):
    code = "empty_class"


class TooFewItems(LoopscreenError):
    code = "too_few_items"


# harness
class EmptySplit(LoopscreenError):
    code = "empty_split"


class DivergedLoss(LoopscreenError):
    code = "diverged_loss"


class EmptyEval(LoopscreenError):
    code = "empty_eval"


# service
class BindFailure(LoopscreenError):
    code = "bind_failure"


class ModelLoadFailure(LoopscreenError):
    code = "model_load_failure"
