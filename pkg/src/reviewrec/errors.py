"""Exception hierarchy shared across the pipeline."""


class ReviewRecError(Exception):
    """Base class for all pipeline errors."""


class CorpusError(ReviewRecError):
    pass


class ColdStartError(CorpusError):
    """Requested user or item does not appear in the training split."""


class PromptError(ReviewRecError):
    pass


class SummaryParseError(PromptError):
    """Model output contained none of the expected summary labels."""


class BackendError(ReviewRecError):
    pass


class TransportError(BackendError):
    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BackendError):
    """Endpoint replied with a body we cannot interpret."""


class CapabilityError(BackendError):
    """Endpoint lacks a required feature (e.g. token log-probabilities)."""


class MockScriptError(BackendError):
    """No scripted rule matched, or a matching rule was exhausted."""


class SummarizationError(ReviewRecError):
    pass


class ExportError(ReviewRecError):
    pass


class PredictionError(ReviewRecError):
    pass


class EvaluationError(ReviewRecError):
    pass


class DivergenceError(ReviewRecError):
    """Training loss became non-finite; try a smaller learning rate."""


class ConfigError(ReviewRecError):
    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)
