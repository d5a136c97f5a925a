"""Exception hierarchy shared across the package."""


class BehaviorSynthError(Exception):
    """Base class for every error raised by this package."""


class InvalidDictionary(BehaviorSynthError):
    pass


class DictionaryConflict(InvalidDictionary):
    """A token string appears in more than one vocabulary category."""

    def __init__(self, token: str, categories: tuple[str, ...] = ()):
        self.token = token
        self.categories = categories
        where = f" (in {', '.join(categories)})" if categories else ""
        super().__init__(f"token {token!r} is declared more than once{where}")


class UnknownToken(BehaviorSynthError):
    def __init__(self, token, position: int, detail: str = ""):
        self.token = token
        self.position = position
        msg = f"unknown token {token!r} at position {position}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ShapeError(BehaviorSynthError):
    pass


class ValidationError(BehaviorSynthError):
    """A sequence violates the device dictionary or shape rules.

    ``violations`` holds the machine-readable records, ``line`` the 1-based
    source line when the sequence came from a file.
    """

    def __init__(self, message: str, violations=(), line: int | None = None):
        self.violations = list(violations)
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ParseError(BehaviorSynthError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InvalidSpec(BehaviorSynthError):
    pass


class EmptyDataset(BehaviorSynthError):
    pass


class NonFiniteLoss(BehaviorSynthError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class VocabMismatch(BehaviorSynthError):
    pass


class DatasetTooSmall(BehaviorSynthError):
    pass


class InvalidK(BehaviorSynthError):
    pass


class ReportMismatch(BehaviorSynthError):
    pass


class KTooLarge(BehaviorSynthError):
    pass


class NoSequenceBlock(BehaviorSynthError):
    pass


class MalformedList(BehaviorSynthError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at offset {position})")


class ProviderError(BehaviorSynthError):
    def __init__(self, status: int | None, body: str, attempts: int = 1):
        self.status = status
        self.body = body
        self.attempts = attempts
        super().__init__(f"provider error status={status} after {attempts} attempt(s): {body[:200]}")


class Timeout(ProviderError):
    def __init__(self, body: str = "request timed out", attempts: int = 1):
        super().__init__(None, body, attempts)


class RateLimited(ProviderError):
    def __init__(self, body: str = "rate limited", attempts: int = 1):
        super().__init__(429, body, attempts)


class MissingCredential(BehaviorSynthError):
    pass
