"""
A program-wide wall clock, used only to time episodes. Tests can pin the value
it reports so that reports carrying wall-clock fields stay reproducible.
"""

from __future__ import annotations

import time
from typing import ClassVar, Self, final


@final
class WallClock:
    """
    A singleton class wrapping the monotonic performance counter.

    Implements the singleton pattern.
    """

    __instance: ClassVar[WallClock]

    __now: float | None

    def __new__(cls) -> Self:
        try:
            return WallClock.__instance
        except AttributeError:
            WallClock.__instance = self = super().__new__(cls)
            self.__now = None
            return self

    def now(self) -> float:
        """Seconds on the monotonic clock, or the pinned value if one is set."""
        return now if (now := self.__now) is not None else time.perf_counter()

    def _set_now(self, now: float | None) -> None:
        """Pins the reported time; ``None`` restores the real clock."""
        self.__now = now
