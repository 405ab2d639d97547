"""
Error taxonomy for kg-linker.

Every error carries a stable machine `code`, the process `exit_code` the CLI
uses for it and a human `detail`, much like an HTTP status with its detail.
"""
from typing import Optional


class KGLinkerError(Exception):
    """Base class for all expected failures."""

    code = "error"
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error": self.code, "exit_code": self.exit_code, "detail": self.detail}


class MissingFileError(KGLinkerError):
    code = "missing-file"
    exit_code = 3


class ConfigError(KGLinkerError):
    code = "bad-config"
    exit_code = 4


class SynthSpecError(ConfigError):
    code = "bad-synth-spec"


class UsageError(ConfigError):
    """Bad command-line arguments."""

    code = "usage"
    exit_code = 2


class CheckpointError(KGLinkerError):
    code = "checkpoint"
    exit_code = 5


class NoSubgraphError(KGLinkerError):
    """No path of length <= L joins the query pair (or the pair is degenerate)."""

    code = "no-subgraph"
    exit_code = 6


class InputFormatError(KGLinkerError):
    code = "input-format"
    exit_code = 7

    def __init__(self, detail: str, line_number: Optional[int] = None, source: Optional[str] = None):
        where = ""
        if source is not None:
            where += f"{source}"
        if line_number is not None:
            where += f":{line_number}"
        super().__init__(f"{where}: {detail}" if where else detail)
        self.line_number = line_number
        self.source = source


class UnknownEntityError(InputFormatError):
    code = "unknown-id"


class TrainingDivergedError(KGLinkerError):
    code = "diverged"
    exit_code = 8

    def __init__(self, detail: str, step: int):
        super().__init__(f"{detail} (step {step})")
        self.step = step


class ShapeError(KGLinkerError):
    code = "shape"
    exit_code = 9


class NumericError(KGLinkerError):
    code = "non-finite"
    exit_code = 9


class GradientError(KGLinkerError):
    code = "gradient"
    exit_code = 9


class LabelError(KGLinkerError):
    code = "bad-labels"
    exit_code = 9


class OutputError(KGLinkerError):
    code = "unwritable-output"
    exit_code = 3
