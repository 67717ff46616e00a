"""Input validation helpers."""
from __future__ import annotations

import numpy as np

from .channel import ChannelTensor
from .exceptions import InvalidInputError


def check_positive(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} must be a number") from exc
    if not np.isfinite(v) or v <= 0:
        raise InvalidInputError(f"{name} must be positive, got {value!r}")
    return v


def check_channel(chan, require_arrays: bool = True) -> ChannelTensor:
    """Accept only a ChannelTensor with an attached array layout."""
    if not isinstance(chan, ChannelTensor):
        raise InvalidInputError(f"expected a ChannelTensor, got {type(chan).__name__}")
    if require_arrays and chan.arrays is None:
        raise InvalidInputError("channel tensor has no array layout attached")
    return chan


def check_index(index, upper: int, name: str) -> int:
    """Validate a 1-based index and return it 0-based."""
    if int(index) != index or not 1 <= index <= upper:
        raise InvalidInputError(f"{name} {index} outside 1..{upper}")
    return int(index) - 1
