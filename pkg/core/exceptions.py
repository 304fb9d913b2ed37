from typing import Any, List, Optional


class ToolkitError(Exception):
    """Base error; `detail` is what the CLI reports"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ContractViolation(ToolkitError):
    exit_code = 2


class UnsupportedGate(ToolkitError):
    exit_code = 3


class ConfigurationError(ToolkitError):
    exit_code = 4


class DivergenceError(ToolkitError):
    """Loss became non-finite or exceeded the divergence threshold"""

    exit_code = 5

    def __init__(
        self,
        detail: str,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
        trace: Optional[List[Any]] = None,
    ):
        super().__init__(detail)
        self.epoch = epoch
        self.batch = batch
        self.trace = trace or []
