"""Outlier position coding with fixed-width gap tokens.

Positions are turned into 1-based gaps.  A gap ``x`` that fits in
``[1, 2**b - 1]`` is one token; a larger gap is written as
``(x - 1) // (2**b - 1)`` flag tokens of value ``2**b`` followed by the
terminal ``(x - 1) % (2**b - 1) + 1``.  Each token occupies ``b`` bits on
the wire as ``token - 1``, so the flag is the all-ones pattern.

Blockwise mode restarts the gap sequence at every ``block_size`` columns and
keeps a 16-bit outlier count per block; every block stream starts on a byte
boundary so blocks can be located and decoded independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from icquant.bitpack import pack_bits, packed_size, trailing_bits_zero, unpack_bits
from icquant.errors import CorruptionError, ValidationError

MIN_WIDTH = 2
MAX_WIDTH = 15
BLOCK_COUNT_BITS = 16
DEFAULT_BLOCK_SIZE = 256

Mode = Literal["whole-row", "blockwise"]


@dataclass(frozen=True)
class GapCode:
    bit_width: int
    token_count: int
    packed: bytes
    row_length: int
    mode: Mode = "whole-row"
    block_size: int = 0
    block_counts: np.ndarray | None = field(default=None, compare=False)

    @property
    def flag(self) -> int:
        return 1 << self.bit_width

    @property
    def n_blocks(self) -> int:
        if self.mode != "blockwise":
            return 1
        return -(-self.row_length // self.block_size)

    @property
    def outlier_count(self) -> int:
        if self.mode == "blockwise":
            return int(self.block_counts.sum())
        return self.token_count - int(np.count_nonzero(self.tokens() == self.flag))

    def tokens(self) -> np.ndarray:
        """Token values in [1, 2**b] in stream order (blocks concatenated)."""
        if self.mode == "whole-row":
            return unpack_bits(self.packed, self.bit_width, self.token_count) + 1
        return np.concatenate([t for _, _, t in _iter_block_tokens(self)] or [np.zeros(0, np.int64)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GapCode):
            return NotImplemented
        same_counts = (self.block_counts is None and other.block_counts is None) or (
            self.block_counts is not None
            and other.block_counts is not None
            and np.array_equal(self.block_counts, other.block_counts)
        )
        return (
            self.bit_width == other.bit_width
            and self.token_count == other.token_count
            and self.packed == other.packed
            and self.row_length == other.row_length
            and self.mode == other.mode
            and self.block_size == other.block_size
            and same_counts
        )


def _check_width(b: int) -> None:
    if not MIN_WIDTH <= b <= MAX_WIDTH:
        raise ValidationError(f"gap bit width must lie in [{MIN_WIDTH}, {MAX_WIDTH}], got {b}")


def _check_indices(indices, row_length: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size:
        if idx[0] < 0 or idx[-1] >= row_length:
            raise ValidationError("outlier index outside [0, row_length)")
        if np.any(np.diff(idx) <= 0):
            raise ValidationError("outlier indices must be strictly increasing")
    return idx


def gap_tokens(positions_1based: np.ndarray, b: int) -> np.ndarray:
    """Token sequence for ascending 1-based positions (gap origin at 0)."""
    if positions_1based.size == 0:
        return np.zeros(0, dtype=np.int64)
    m = (1 << b) - 1
    gaps = np.diff(positions_1based, prepend=0)
    n_flags = (gaps - 1) // m
    terminal_at = np.cumsum(n_flags + 1) - 1
    tokens = np.full(int(terminal_at[-1]) + 1, m + 1, dtype=np.int64)
    tokens[terminal_at] = (gaps - 1) % m + 1
    return tokens


def tokens_to_positions(tokens: np.ndarray, b: int) -> np.ndarray:
    """1-based positions recorded by a token sequence."""
    m = (1 << b) - 1
    flag = m + 1
    steps = np.where(tokens == flag, m, tokens)
    return np.cumsum(steps)[tokens != flag]


def encode_gaps(outlier_indices, row_length: int, b: int) -> GapCode:
    """Encode ascending 0-based outlier positions of one row.

    Raises:
        ValidationError: b outside [2, 15] or indices not strictly increasing
            within [0, row_length).
    """
    _check_width(b)
    idx = _check_indices(outlier_indices, row_length)
    tokens = gap_tokens(idx + 1, b)
    return GapCode(b, int(tokens.size), pack_bits(tokens - 1, b), row_length)


def encode_blockwise(outlier_indices, row_length: int, b: int, block_size: int = DEFAULT_BLOCK_SIZE) -> GapCode:
    """Encode positions with gaps restarted in each ``block_size`` column block."""
    _check_width(b)
    if not 1 <= block_size <= 0xFFFF:
        raise ValidationError(f"block_size must lie in [1, 65535], got {block_size}")
    idx = _check_indices(outlier_indices, row_length)
    n_blocks = -(-row_length // block_size)
    block_of = idx // block_size
    counts = np.bincount(block_of, minlength=n_blocks)
    if idx.size == 0:
        return GapCode(b, 0, b"", row_length, "blockwise", block_size, counts.astype(np.uint16))

    # previous position within the same block, or the block origin
    prev = np.where(np.diff(block_of, prepend=-1) != 0, block_of * block_size, np.concatenate([[0], idx[:-1] + 1]))
    gaps = idx + 1 - prev
    m = (1 << b) - 1
    n_flags = (gaps - 1) // m
    terminal_at = np.cumsum(n_flags + 1) - 1
    tokens = np.full(int(terminal_at[-1]) + 1, m + 1, dtype=np.int64)
    tokens[terminal_at] = (gaps - 1) % m + 1
    token_block = np.repeat(block_of, n_flags + 1)

    # each block's stream starts on a byte boundary
    per_block = np.bincount(token_block, minlength=n_blocks)
    block_bytes = (per_block * b + 7) // 8
    block_start_bit = 8 * (np.cumsum(block_bytes) - block_bytes)
    first_token = np.cumsum(per_block) - per_block
    rank = np.arange(tokens.size) - first_token[token_block]
    token_bit = block_start_bit[token_block] + rank * b
    bits = np.zeros(8 * int(block_bytes.sum()), dtype=np.uint8)
    shifts = np.arange(b)
    bits[(token_bit[:, None] + shifts).ravel()] = (((tokens - 1)[:, None] >> shifts) & 1).ravel()
    packed = np.packbits(bits, bitorder="little").tobytes()
    return GapCode(b, int(tokens.size), packed, row_length, "blockwise", block_size, counts.astype(np.uint16))


def _read_tokens(buf: np.ndarray, offset: int, b: int, expected: int, max_tokens: int, where: str):
    """Read tokens from byte ``offset`` until ``expected`` terminals are seen.

    Returns (tokens, bytes consumed).
    """
    if expected == 0:
        return np.zeros(0, dtype=np.int64), 0
    flag = 1 << b
    avail = (buf.size - offset) * 8 // b
    n = min(avail, max_tokens)
    tokens = unpack_bits(buf[offset:], b, n) + 1
    term = np.flatnonzero(tokens != flag)
    if term.size < expected:
        raise CorruptionError(f"{where}: stream exhausted after {term.size} of {expected} outliers")
    used = int(term[expected - 1]) + 1
    return tokens[:used], packed_size(used, b)


def _iter_block_tokens(code: GapCode) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield (block index, byte offset, tokens) for each block of a blockwise code."""
    bits = np.unpackbits(np.frombuffer(code.packed, dtype=np.uint8), bitorder="little").astype(np.int64)
    b = code.bit_width
    flag = code.flag
    weights = np.int64(1) << np.arange(b, dtype=np.int64)
    offset = 0
    for k in range(code.n_blocks):
        count = int(code.block_counts[k])
        if count == 0:
            yield k, offset, np.zeros(0, dtype=np.int64)
            continue
        width = min(code.block_size, code.row_length - k * code.block_size)
        # a valid block holds at most count terminals plus one flag per 2**b - 1 columns
        n = min((bits.size - 8 * offset) // b, count + width // (flag - 1) + 1)
        tokens = bits[8 * offset : 8 * offset + n * b].reshape(n, b) @ weights + 1
        term = np.flatnonzero(tokens != flag)
        if term.size < count:
            raise CorruptionError(f"block {k}: stream exhausted after {term.size} of {count} outliers")
        used = int(term[count - 1]) + 1
        nbytes = packed_size(used, b)
        if bits[8 * offset + used * b : 8 * (offset + nbytes)].any():
            raise CorruptionError(f"block {k}: nonzero padding bits")
        yield k, offset, tokens[:used]
        offset += nbytes
    if 8 * offset != bits.size:
        raise CorruptionError(f"{bits.size // 8 - offset} trailing bytes after last block")


def _validate_positions(pos: np.ndarray, limit: int, where: str) -> None:
    if pos.size and pos[-1] > limit:
        raise CorruptionError(f"{where}: decoded position {int(pos[-1])} exceeds length {limit}")


def iter_block_positions(code: GapCode) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (block index, absolute 0-based positions) block by block."""
    if code.mode != "blockwise":
        yield 0, decode_gaps(code, code.outlier_count)
        return
    for k, _, tokens in _iter_block_tokens(code):
        start = k * code.block_size
        width = min(code.block_size, code.row_length - start)
        local = tokens_to_positions(tokens, code.bit_width)
        _validate_positions(local, width, f"block {k}")
        yield k, local - 1 + start


def decode_gaps(code: GapCode, expected_outliers: int) -> np.ndarray:
    """Recover ascending 0-based outlier positions.

    Raises:
        CorruptionError: fewer terminal tokens than ``expected_outliers``,
            leftover tokens or bytes, nonzero padding, or a position past
            the row end.
    """
    if code.mode == "blockwise":
        if code.block_counts is None or code.block_counts.size != code.n_blocks:
            raise CorruptionError("block count table does not match row length")
        if int(code.block_counts.sum()) != expected_outliers:
            raise CorruptionError(
                f"block counts sum to {int(code.block_counts.sum())}, expected {expected_outliers}"
            )
        parts = [pos for _, pos in iter_block_positions(code)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    buf = np.frombuffer(code.packed, dtype=np.uint8)
    tokens, used = _read_tokens(buf, 0, code.bit_width, expected_outliers, buf.size * 8 // code.bit_width, "gap stream")
    if used != buf.size or not trailing_bits_zero(code.packed, tokens.size * code.bit_width):
        raise CorruptionError("gap stream has data after the last outlier")
    if code.token_count != tokens.size:
        raise CorruptionError(f"token count {code.token_count} does not match stream ({tokens.size})")
    pos = tokens_to_positions(tokens, code.bit_width)
    _validate_positions(pos, code.row_length, "gap stream")
    return pos - 1


def aux_bits(code: GapCode) -> int:
    return code.n_blocks * BLOCK_COUNT_BITS if code.mode == "blockwise" else 0


def measured_overhead(code: GapCode, row_length: int | None = None) -> float:
    """Index storage cost in bits per weight (tokens plus any block count table)."""
    n = code.row_length if row_length is None else row_length
    return (code.token_count * code.bit_width + aux_bits(code)) / n


def from_bytes(
    packed: bytes,
    b: int,
    row_length: int,
    expected_outliers: int,
    mode: Mode = "whole-row",
    block_size: int = 0,
    block_counts: np.ndarray | None = None,
) -> GapCode:
    """Rebuild a GapCode from its serialized payload, validating it fully."""
    _check_width(b)
    if mode == "whole-row":
        buf = np.frombuffer(packed, dtype=np.uint8)
        tokens, _ = _read_tokens(buf, 0, b, expected_outliers, buf.size * 8 // b, "gap stream")
        code = GapCode(b, int(tokens.size), packed, row_length)
    else:
        code = GapCode(b, 0, packed, row_length, "blockwise", block_size, block_counts)
        total = sum(t.size for _, _, t in _iter_block_tokens(code))
        code = GapCode(b, total, packed, row_length, "blockwise", block_size, block_counts)
    decode_gaps(code, expected_outliers)
    return code
