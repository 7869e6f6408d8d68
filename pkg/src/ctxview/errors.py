"""Error types shared by the readers, the bundle store and the CLI."""


class ConfigError(ValueError):
    """Invalid run configuration (bad flag value, K mismatch, ...)."""


class DataError(ValueError):
    """Input data that cannot be used as given."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class BundleError(DataError):
    """Missing, incomplete or incompatible model bundle."""


class NumericalError(ArithmeticError):
    """A fit or prediction produced non-finite values."""
