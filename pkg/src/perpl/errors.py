"""Exception hierarchy shared by the library and the command-line harness."""


class PerplError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this error."""

    exit_code = 1


class ConfigError(PerplError):
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(PerplError):
    exit_code = 3


class NumericalAbort(PerplError):
    exit_code = 4
