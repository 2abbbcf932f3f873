class PureboxError(Exception):
    pass


# corpus
class SourceUnavailable(PureboxError):
    pass


class EmptyResult(PureboxError):
    pass


class UnknownHash(PureboxError):
    pass


class InsufficientData(PureboxError):
    def __init__(self, class_id, available, required):
        super().__init__(f"class {class_id!r} has {available} curated entries, needs {required}")
        self.class_id = class_id
        self.available = available
        self.required = required


class OutOfRange(PureboxError):
    pass


# zoo
class DataMismatch(PureboxError):
    pass


class DivergedTraining(PureboxError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record if record is not None else []


class EmptySplit(PureboxError):
    pass


# genattack
class InvalidSpec(PureboxError):
    pass


class MissingFrozenNoise(PureboxError):
    pass


class EnsembleMismatch(PureboxError):
    pass


class ShapeMismatch(PureboxError):
    pass


# transfer
class EmptyEvalSet(PureboxError):
    pass


class OracleFailure(PureboxError):
    def __init__(self, message, pair_index=None):
        super().__init__(message)
        self.pair_index = pair_index


class ProtocolMismatch(PureboxError):
    pass


# blendquery
class AlphaOutOfRange(PureboxError):
    pass


class InvalidTarget(PureboxError):
    pass


class NotRobustModel(UserWarning):
    pass


class NoBoundaryFound(PureboxError):
    def __init__(self, message, queries_used=0):
        super().__init__(message)
        self.queries_used = queries_used


class QueryBudgetExhausted(PureboxError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EmptyBoundarySet(PureboxError):
    pass


# orchestrate
class ConfigInvalid(PureboxError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class StageFailed(PureboxError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


class EmptyRecords(PureboxError):
    pass
