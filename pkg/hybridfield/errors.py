from __future__ import annotations


class HybridFieldError(Exception):
    """Base class for every error raised by hybridfield."""


class InputError(HybridFieldError, ValueError):
    """Bad user input. The CLI maps it to exit code 2."""


class ConfigError(InputError):
    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class SceneSpecError(InputError):
    def __init__(self, message: str, *, where: str = "") -> None:
        self.where = str(where or "")
        super().__init__(f"{self.where}: {message}" if self.where else message)


class DatasetError(InputError):
    def __init__(self, message: str, *, path: str = "") -> None:
        self.path = str(path or "")
        super().__init__(f"{message} ({self.path})" if self.path else message)


class ShapeError(HybridFieldError, ValueError):
    def __init__(self, primitive: str, detail: str) -> None:
        self.primitive = primitive
        super().__init__(f"[{primitive}] shape mismatch: {detail}")


class NonFiniteError(HybridFieldError, ArithmeticError):
    def __init__(self, primitive: str, node_index: int, detail: str = "") -> None:
        self.primitive = primitive
        self.node_index = int(node_index)
        suffix = f": {detail}" if detail else ""
        super().__init__(f"non-finite value at node {self.node_index} ({primitive}){suffix}")


class GraphStateError(HybridFieldError, RuntimeError):
    pass


class NonDeterministicLossError(HybridFieldError, RuntimeError):
    pass


class TrainingAborted(HybridFieldError, RuntimeError):
    pass
