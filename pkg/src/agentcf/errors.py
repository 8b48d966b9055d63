"""Exception hierarchy shared by every subsystem.

The CLI maps each class to its own nonzero exit code, so new errors should
subclass one of these rather than :class:`AgentCFError` directly.
"""


class AgentCFError(Exception):
    exit_code = 1


class DataError(AgentCFError):
    """Malformed or insufficient input data."""

    exit_code = 3

    def __init__(self, message, line=None, user=None):
        self.line = line
        self.user = user
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionError(AgentCFError):
    """A persisted document has an unknown or missing schema version."""

    exit_code = 4


class ConfigError(AgentCFError):
    """Invalid configuration. ``problems`` lists every issue found."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class GatewayError(AgentCFError):
    exit_code = 5


class ReplayMiss(GatewayError):
    def __init__(self, digest):
        self.digest = digest
        super().__init__(f"no recorded response for request digest {digest}")


class BackendHTTPError(GatewayError):
    def __init__(self, status, body):
        self.status = status
        self.body = body
        super().__init__(f"backend returned HTTP {status}: {body}")


class ParseError(AgentCFError, ValueError):
    """An LLM completion did not match the expected output format."""

    exit_code = 6

    def __init__(self, message, raw=""):
        self.raw = raw
        super().__init__(message)


class UnparsableChoice(ParseError):
    pass


class UnparsableRanking(ParseError):
    pass


class TemplateError(AgentCFError, KeyError):
    exit_code = 2

    def __str__(self):
        return self.args[0] if self.args else ""


class OutputExistsError(AgentCFError):
    """A command would overwrite earlier outputs without ``--force``."""

    exit_code = 7
