"""Fixed-width little-endian bit packing (LSB-first)."""

from __future__ import annotations

import numpy as np


def packed_size(count: int, width: int) -> int:
    """Bytes needed for ``count`` values of ``width`` bits."""
    return (count * width + 7) // 8


def pack_bits(values: np.ndarray, width: int) -> bytes:
    """Pack unsigned integers into a byte string, LSB-first, zero padded."""
    values = np.asarray(values, dtype=np.uint64)
    if width == 0 or values.size == 0:
        return b""
    if values.size and int(values.max()) >> width:
        raise ValueError(f"value does not fit in {width} bits")
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_bits(data: bytes | np.ndarray, width: int, count: int, bit_offset: int = 0) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns ``count`` values as int64.

    Raises ValueError if ``data`` holds fewer than ``bit_offset + count*width`` bits.
    """
    if count == 0 or width == 0:
        return np.zeros(count, dtype=np.int64)
    buf = np.frombuffer(data, dtype=np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) else data
    need = bit_offset + count * width
    if need > buf.size * 8:
        raise ValueError(f"need {need} bits, only {buf.size * 8} available")
    first = bit_offset // 8
    last = (need + 7) // 8
    bits = np.unpackbits(buf[first:last], bitorder="little")
    start = bit_offset - first * 8
    bits = bits[start : start + count * width].reshape(count, width).astype(np.int64)
    return bits @ (np.int64(1) << np.arange(width, dtype=np.int64))


def trailing_bits_zero(data: bytes, used_bits: int) -> bool:
    """True when every bit past ``used_bits`` in ``data`` is zero."""
    if used_bits >= len(data) * 8:
        return True
    byte = used_bits // 8
    rem = used_bits % 8
    if rem and data[byte] >> rem:
        return False
    tail = data[byte + (1 if rem else 0) :]
    return not any(tail)
