"""Exception types raised across the toolkit."""


class NuggetBenchError(Exception):
    pass


class ConfigurationError(NuggetBenchError):
    pass


class EmptyCorpusError(NuggetBenchError):
    pass


class ContractError(NuggetBenchError):
    """An input violated a documented precondition."""


class TransportError(NuggetBenchError):
    """A provider call kept failing after the retry budget ran out."""

    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = list(attempts or [])


class ProviderContractError(NuggetBenchError):
    pass


class ParseError(NuggetBenchError):
    pass


class NuggetizationError(NuggetBenchError):
    def __init__(self, question_id, message):
        super().__init__(f"{question_id}: {message}")
        self.question_id = question_id


class PoolingError(NuggetBenchError):
    pass


class JudgingError(NuggetBenchError):
    pass


class IntegrityError(NuggetBenchError):
    pass


class GenerationError(NuggetBenchError):
    pass


class AssignmentError(NuggetBenchError):
    pass


class RerunRequired(NuggetBenchError):
    def __init__(self, stage):
        super().__init__(f"rerun required: {stage}")
        self.stage = stage
