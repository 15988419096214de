from typing import TypeVar, Type, Union, Optional, Any, Callable, Generic

from abc import abstractmethod, ABCMeta
from enum import IntEnum

__all__ = [
    "NOT_PROVIDED",
    "NotProvided",
    "FAIL",
    "Estimate",
    "is_fail",
    "SeedStream",
    "TypeOrCallable",
    "ISerializationContext",
    "IConverter",
    "IConverterFactory",
]


class NotProvided:
    """Marks an absent key, distinct from an explicit None"""

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "<NOT_PROVIDED>"


NOT_PROVIDED = NotProvided()

# Decoder outcome: a positive estimate, or FAIL when the pruned strategy halts
Estimate = int
FAIL: Estimate = -1


def is_fail(estimate: Estimate) -> bool:
    return estimate == FAIL


_T = TypeVar("_T")

TypeOrCallable = Union[Type[_T], Callable[..., _T]]


class ISerializationContext(metaclass=ABCMeta):
    @abstractmethod
    def get_converter(self, tp: TypeOrCallable[_T]) -> "IConverter[_T]":
        ...


class IConverter(Generic[_T], metaclass=ABCMeta):
    @abstractmethod
    def dump(self, obj: _T, context: ISerializationContext) -> Any:
        ...

    @abstractmethod
    def load(self, data: Any, key: Any, context: ISerializationContext) -> _T:
        ...


class IConverterFactory(Generic[_T], metaclass=ABCMeta):
    @abstractmethod
    def try_create_converter(
        self, tp: TypeOrCallable[Any], context: ISerializationContext
    ) -> Optional[IConverter[_T]]:
        ...


class SeedStream(IntEnum):
    """Child-seed keys; every random stream of a trial hangs off one of these"""

    DEFECTIVE = 1
    STRATEGY = 2
    PERMUTATION = 3
    WRAPPED = 4
    SELECTION = 5
    INTERVAL = 6
    EVENTS = 7
    CONTENTS = 8
