"""Exception hierarchy shared by every module."""


class MLVError(Exception):
    """Base class for all errors raised by mlvedit."""


class InvalidConfigError(MLVError, ValueError):
    pass


class InvalidShapeError(MLVError, ValueError):
    pass


class NumericDomainError(MLVError, ArithmeticError):
    pass


class OutOfRangeError(MLVError, IndexError):
    pass


class ProtocolError(MLVError, RuntimeError):
    """Raised when the anchor-cache capture/inject ordering is violated."""


class MissingEntryError(ProtocolError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ConfigError(InvalidConfigError):
    """Config-file error carrying the offending line, when there is one."""

    def __init__(self, message: str, path=None, line_no: int | None = None, line: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line_no is not None:
                where += f":{line_no}"
            where += ": "
        text = where + message
        if line is not None:
            text += f"\n    {line.rstrip()}"
        super().__init__(text)
        self.path = path
        self.line_no = line_no
        self.line = line
