"""Exception hierarchy shared by all fusewidth modules."""


class FusewidthError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(FusewidthError):
    """Arguments violate an operation's precondition."""


class SortError(FusewidthError):
    """A term or rule is ill-sorted.

    ``position`` is the path (tuple of child indices) of the offending
    node when known.
    """

    def __init__(self, message: str, position: tuple[int, ...] | None = None):
        super().__init__(message)
        self.position = position


class EvalError(FusewidthError):
    """A well-sorted term has no value (e.g. a renaming collapses two
    constants interpreted by different elements)."""


class ParseError(FusewidthError):
    """Syntax error in a term, grammar or JSON input.

    ``line``/``column`` are 1-based when known.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" at {line}:{column}" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ResourceError(FusewidthError):
    """Input exceeds a configured exact-computation bound."""


class PreconditionError(FusewidthError):
    """A pipeline precondition failed; carries a counterexample when one
    is available."""

    def __init__(self, message: str, counterexample=None):
        super().__init__(message)
        self.counterexample = counterexample


class UndefinedOperation(FusewidthError):
    """A partial term operation is undefined for these arguments; names
    the blocking constant when there is one."""

    def __init__(self, message: str, blocking: str | None = None):
        super().__init__(message)
        self.blocking = blocking
