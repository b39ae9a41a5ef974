"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line error message.
"""


class FewShotError(Exception):
    category = "error"


class ShapeError(FewShotError, ValueError):
    category = "shape"


class UsageError(FewShotError, RuntimeError):
    category = "usage"


class TrainingError(FewShotError, RuntimeError):
    category = "training"

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class InputError(FewShotError, ValueError):
    category = "input"


class ParseError(FewShotError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(FewShotError, ValueError):
    category = "schema"


class ConfigError(FewShotError, ValueError):
    category = "config"


class SamplingError(FewShotError, RuntimeError):
    category = "sampling"


class ProtocolError(FewShotError, RuntimeError):
    category = "protocol"


class MetricError(FewShotError, ValueError):
    category = "metric"


class ExportError(FewShotError, RuntimeError):
    category = "export"
