"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class OtSecTestError(Exception):
    """Base class for every error raised by this package."""


class InputError(OtSecTestError, ValueError):
    """Malformed user input (files, expressions, vectors)."""


class MalformedRow(InputError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"record {index}: {reason}")
        self.index = index
        self.reason = reason


class DuplicateId(InputError):
    def __init__(self, record_id: str, index: int):
        super().__init__(f"record {index}: duplicate id {record_id!r}")
        self.record_id = record_id
        self.index = index


class UnknownEnumValue(MalformedRow):
    def __init__(self, index: int, field: str, value: str, allowed):
        super().__init__(index, f"{field} {value!r} not one of {', '.join(allowed)}")
        self.field = field
        self.value = value


class EmptyComponent(InputError):
    pass


class NotARange(InputError):
    pass


class UnitMismatch(InputError):
    pass


class MalformedVersion(InputError):
    pass


class MalformedVector(InputError):
    pass


class DuplicateMetric(MalformedVector):
    def __init__(self, metric: str):
        super().__init__(f"duplicate metric {metric}")
        self.metric = metric


class MissingMetric(MalformedVector):
    def __init__(self, metric: str):
        super().__init__(f"missing metric {metric}")
        self.metric = metric


class OutOfRange(InputError):
    pass


class ConditionSyntaxError(InputError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class FsmError(InputError):
    """Invalid machine definition (nondeterminism, unknown states, bad text)."""


class UnknownAsset(OtSecTestError, KeyError):
    def __init__(self, asset_id: str):
        super().__init__(asset_id)
        self.asset_id = asset_id

    def __str__(self) -> str:
        return f"unknown asset {self.asset_id}"


class DanglingReference(OtSecTestError):
    pass


class SchemaViolation(OtSecTestError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnreachableTransition(OtSecTestError):
    def __init__(self, indices):
        self.indices = tuple(indices)
        super().__init__(f"unreachable transitions: {list(self.indices)}")


class BudgetExceeded(OtSecTestError):
    pass


class UndefinedInput(OtSecTestError):
    def __init__(self, sequence: int, step: int, token: str):
        super().__init__(f"sequence {sequence}, step {step}: input {token!r} undefined")
        self.sequence = sequence
        self.step = step
        self.token = token


class UnboundIdentifier(OtSecTestError):
    def __init__(self, name: str):
        super().__init__(f"unbound identifier {name!r}")
        self.name = name


class TypeMismatch(OtSecTestError):
    def __init__(self, left, right):
        super().__init__(f"cannot compare {type(left).__name__} with {type(right).__name__}")
        self.left = left
        self.right = right


class UndefinedAction(OtSecTestError):
    def __init__(self, token: str):
        super().__init__(f"undefined action {token!r}")
        self.token = token


class DigestMismatch(OtSecTestError):
    pass
