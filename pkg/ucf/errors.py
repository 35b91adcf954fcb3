"""
Exception hierarchy. Every error the driver can surface maps to an exit code.
"""


class UcfError(Exception):
    exit_code: int = 1
    kind: str = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_line(self) -> str:
        """Single machine-parseable line for stderr."""
        msg = str(self.args[0]).replace('"', "'").replace("\n", " ")
        parts = [f"error kind={self.kind}", f"code={self.exit_code}"]
        parts += [f"{k}={v}" for k, v in self.context.items()]
        parts.append(f'message="{msg}"')
        return " ".join(parts)


class ShapeError(UcfError, ValueError):
    kind = "shape"


class ContractError(UcfError):
    kind = "contract"


class ConfigError(UcfError):
    exit_code = 3
    kind = "config"


class InsufficientPositivesError(UcfError):
    kind = "insufficient-positives"


class DatasetParseError(UcfError):
    kind = "parse"

    def __init__(self, message: str, line: int, path: str | None = None):
        super().__init__(message, line=line, path=path)
        self.line = line

    def __str__(self):
        return f"line {self.line}: {super().__str__()}"


class DataIntegrityError(UcfError):
    kind = "integrity"


class UnfittableError(UcfError):
    kind = "unfittable"


class StratificationError(UcfError):
    kind = "stratification"


class UndefinedMetricError(UcfError):
    kind = "undefined-metric"


class SizeError(UcfError):
    kind = "size"


class MissingArtifactError(UcfError):
    exit_code = 2
    kind = "missing-artifact"

    def __init__(self, path: str):
        super().__init__(f"required artifact not found: {path}", path=path)
        self.path = path


class NumericalError(UcfError):
    exit_code = 4
    kind = "numerical"

    def __init__(self, message: str, stage: int, epoch: int):
        super().__init__(message, stage=stage, epoch=epoch)
        self.stage = stage
        self.epoch = epoch

    def __str__(self):
        return f"stage {self.stage}, epoch {self.epoch}: {super().__str__()}"


class UsageError(UcfError):
    exit_code = 2
    kind = "usage"
