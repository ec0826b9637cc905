"""Implementation of a bounded trailing-history container."""

from __future__ import annotations

from collections import deque
from collections.abc import Callable, Iterable, Iterator
from typing import Concatenate, ParamSpec, Self, TypeVar

from ..errors import EmptyBufferError, ValidationError

P = ParamSpec("P")
R = TypeVar("R")
T_ = TypeVar("T_")


class HistoryBuffer[T]:
    """
    A first-in first-out buffer keeping the most recent ``capacity`` samples.

    Samples are appended in time order; once full, each push evicts the oldest.
    """

    @staticmethod
    def not_empty(
        meth: Callable[Concatenate[HistoryBuffer[T_], P], R]
    ) -> Callable[Concatenate[HistoryBuffer[T_], P], R]:
        """Decorator to ensure that a buffer method is called on a non-empty buffer."""
        def inner(self: HistoryBuffer[T_], /, *args: P.args, **kwargs: P.kwargs) -> R:
            if not self:
                raise EmptyBufferError()
            return meth(self, *args, **kwargs)
        return inner

    __samples: deque[T]

    __slots__ = ("__samples",)

    def __new__(cls, capacity: int, samples: Iterable[T] = ()) -> Self:
        if capacity < 1:
            raise ValidationError("capacity", "must be at least 1")
        self = object.__new__(cls)
        self.__samples = deque(samples, maxlen=capacity)
        return self

    @property
    def capacity(self) -> int:
        maxlen = self.__samples.maxlen
        assert maxlen is not None
        return maxlen

    def push(self, sample: T) -> None:
        self.__samples.append(sample)

    @not_empty
    def latest(self) -> T:
        return self.__samples[-1]

    def snapshot(self) -> tuple[T, ...]:
        return tuple(self.__samples)

    def __iter__(self) -> Iterator[T]:
        return iter(self.__samples)

    def __len__(self) -> int:
        return len(self.__samples)
