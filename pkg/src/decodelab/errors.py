"""Exception hierarchy shared across the package."""


class DecodeLabError(Exception):
    pass


class CapabilityError(DecodeLabError):
    """A layer-logit or hidden-state request hit a provider that cannot serve it."""


class ProtocolError(DecodeLabError):
    """A remote endpoint failed or answered outside the wire format."""


class ProtocolTimeout(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class VocabMismatchError(DecodeLabError):
    pass


class ProviderStepError(DecodeLabError):
    """Provider failure during decoding, tagged with the generation step."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"provider failed at step {step}: {cause!r}")
        self.step = step
        self.cause = cause


class EmptyGenerationError(DecodeLabError):
    pass


class DegenerateQualityError(DecodeLabError):
    """Quality scores are constant, so min-max normalization and PRR are undefined."""


class UndefinedPRRError(DegenerateQualityError):
    pass


class AllTrialsDegenerateError(DecodeLabError):
    pass


class ScorerError(DecodeLabError):
    pass


class MissingItemsError(ScorerError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"scorer omitted items: {', '.join(self.missing)}")


class RangeViolationError(ScorerError):
    pass


class ConfigError(DecodeLabError):
    pass


class DuplicateIdError(DecodeLabError):
    pass


class DatasetParseError(DecodeLabError):
    def __init__(self, malformed):
        self.malformed = list(malformed)
        super().__init__(f"{len(self.malformed)} malformed dataset lines")
