"""Bit-vector helpers. Vectors are uint8 arrays, most significant bit first."""
from __future__ import annotations

import numpy as np


def as_bits(x, width: int | None = None) -> np.ndarray:
    """Accept an int (needs ``width``), a '0101' string or any 0/1 sequence."""
    if isinstance(x, (int, np.integer)):
        if width is None:
            raise ValueError("width is required when converting an int")
        return int_to_bits(int(x), width)
    if isinstance(x, str):
        x = [int(ch) for ch in x]
    arr = np.asarray(x)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bit vectors may only contain 0 and 1")
    arr = arr.astype(np.uint8)
    if width is not None and arr.shape[-1] != width:
        raise ValueError(f"expected {width} bits, got {arr.shape[-1]}")
    return arr


def int_to_bits(value: int, width: int) -> np.ndarray:
    if value < 0 or value >= 1 << width:
        raise ValueError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    out = 0
    for b in as_bits(bits).ravel():
        out = (out << 1) | int(b)
    return out


def bits_to_str(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).ravel())


def hamming(a, b) -> int:
    return int(np.count_nonzero(np.asarray(a) != np.asarray(b)))
