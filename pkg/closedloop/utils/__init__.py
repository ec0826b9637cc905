from .clock import WallClock
from .history import HistoryBuffer
from .rng import make_rng, stream_key

__all__ = ("HistoryBuffer", "WallClock", "make_rng", "stream_key")
