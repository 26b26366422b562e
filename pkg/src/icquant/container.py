"""Binary formats: ICQT for quantized tensors, ICQW for raw float32 matrices.

ICQT v1 layout (all integers little-endian)::

    magic "ICQT" | version u8 | scheme u8 | bits u8 | gap_width u8 | mode u8
    | block_size u16 | d_out u32 | d_in u32 | outliers_per_row u32 | gamma f64
    then per row:  section_length varint | section
    then:          crc32 u32 over every preceding byte

    section = inlier codebook | outlier codebook(s) (only when p > 0)
              | code bitstream (byte padded) | gap payload

A uniform codebook is ``scale f32, zero f32``; a k-means codebook is
``count-1 u8`` followed by ``count`` ascending f32 centroids.  RTN rows always
store the negative then the positive sign-side codebook, an empty side as
two zero floats.  The code bitstream holds inlier codes (n bits), then for RTN
one sign bit per outlier (1 = negative) followed by (n-1)-bit codes, or for SK
n-bit outlier codes.  The gap payload is the packed token stream; blockwise
rows prefix it with one u16 outlier count per block.

ICQW v1: magic "ICQW" | version u8 | dtype u8 (1 = float32) | reserved u16
| d_out u32 | d_in u32 | row-major float32 payload.
"""

from __future__ import annotations

import os
import struct
import zlib
from typing import BinaryIO

import numpy as np

from icquant.bitpack import pack_bits, packed_size, trailing_bits_zero, unpack_bits
from icquant.errors import ChecksumError, CorruptionError, ParseError, ValidationError
from icquant.gapcodec import MAX_WIDTH, MIN_WIDTH, from_bytes
from icquant.partition import outlier_count
from icquant.quantizers import KMeansCodebook, QuantizedRow, UniformCodebook
from icquant.tensor import QuantizedTensor

QUANT_MAGIC = b"ICQT"
RAW_MAGIC = b"ICQW"
VERSION = 1
SCHEMES = {"rtn": 0, "sk": 1}
MODES = {"whole-row": 0, "blockwise": 1}
_HEADER = struct.Struct("<4sBBBBBHIIId")
_RAW_HEADER = struct.Struct("<4sBBHII")
RAW_FLOAT32 = 1


def _varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _uniform_bytes(cb: UniformCodebook | None) -> bytes:
    if cb is None:
        return struct.pack("<ff", 0.0, 0.0)
    return struct.pack("<ff", cb.scale, cb.zero_point)


def _kmeans_bytes(cb: KMeansCodebook) -> bytes:
    c = np.asarray(cb.centroids, dtype="<f4")
    return struct.pack("<B", c.size - 1) + c.tobytes()


def _row_bytes(q: QuantizedRow, gaps, n: int) -> bytes:
    parts = []
    p = q.outlier_count
    if q.scheme == "rtn":
        parts.append(_uniform_bytes(q.inlier_codebook))
        if p:
            parts.append(_uniform_bytes(q.negative_codebook) + _uniform_bytes(q.positive_codebook))
    else:
        parts.append(_kmeans_bytes(q.inlier_codebook))
        if p:
            parts.append(_kmeans_bytes(q.outlier_codebook))

    widths = [(q.inlier_codes, n)]
    if p:
        if q.scheme == "rtn":
            widths += [(q.outlier_signs.astype(np.int64), 1), (q.outlier_codes, n - 1)]
        else:
            widths.append((q.outlier_codes, n))
    bits = [
        np.unpackbits(np.frombuffer(pack_bits(v, w), dtype=np.uint8), bitorder="little")[: v.size * w]
        for v, w in widths
        if w and v.size
    ]
    stream = np.concatenate(bits) if bits else np.zeros(0, dtype=np.uint8)
    parts.append(np.packbits(stream, bitorder="little").tobytes())

    if gaps.mode == "blockwise":
        parts.append(np.asarray(gaps.block_counts, dtype="<u2").tobytes())
    parts.append(gaps.packed)
    return b"".join(parts)


def to_bytes(t: QuantizedTensor) -> bytes:
    """Serialize a tensor; raises ValidationError if it is inconsistent."""
    t.validate()
    if t.bits < 1 or t.bits > 8:
        raise ValidationError("bits must lie in [1, 8]")
    out = [
        _HEADER.pack(
            QUANT_MAGIC, VERSION, SCHEMES[t.scheme], t.bits, t.gap_width, MODES[t.mode],
            t.block_size, t.d_out, t.d_in, t.outlier_count, t.gamma,
        )
    ]
    for q, g in zip(t.rows, t.gaps):
        body = _row_bytes(q, g, t.bits)
        out.append(_varint(len(body)))
        out.append(body)
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    """Bounded cursor over a byte string; every failure is a ParseError.

    Truncation is reported at ``eof`` (the end of the readable region), other
    failures at the start of the offending field.
    """

    def __init__(self, data: bytes, limit: int):
        self.data = data
        self.pos = 0
        self.limit = limit
        self.eof = len(data)
        self.row: int | None = None

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > self.limit:
            raise ParseError(
                f"truncated input: {field} needs {n} bytes, {self.limit - self.pos} remain",
                field, self.eof, row=self.row,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))

    def varint(self, field: str) -> int:
        start = self.pos
        value = shift = 0
        for i in range(5):
            (byte,) = self.take(1, field)
            value |= (byte & 0x7F) << shift
            shift += 7
            if not byte & 0x80:
                if byte == 0 and i > 0:
                    self.fail("non-minimal varint", field, start)
                return value
        self.fail("varint longer than 5 bytes", field, start)

    def fail(self, message: str, field: str, offset: int):
        raise ParseError(message, field, offset, row=self.row)


def _read_uniform(r: _Reader, field: str, bits: int, present: bool) -> UniformCodebook | None:
    start = r.pos
    scale, zero = r.unpack("<ff", field)
    if not (np.isfinite(scale) and np.isfinite(zero)):
        r.fail("non-finite codebook parameter", field, start)
    if not present:
        if r.data[start : start + 8] != bytes(8):
            r.fail("empty sign-side codebook must be zero", field, start)
        return None
    if scale < 0:
        r.fail("negative codebook scale", field, start)
    return UniformCodebook(bits, scale, zero)


def _read_kmeans(r: _Reader, field: str, bits: int) -> KMeansCodebook:
    start = r.pos
    (count,) = r.unpack("<B", field)
    count += 1
    if count > 1 << bits:
        r.fail(f"{count} centroids exceed 2**{bits}", field, start)
    c = np.frombuffer(r.take(4 * count, field), dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(c)) or np.any(np.diff(c) <= 0):
        r.fail("centroids must be finite and strictly ascending", field, start)
    return KMeansCodebook(bits, c)


def _parse_row(r: _Reader, head: dict):
    """Parse one row section; ``r.limit`` marks the section end."""
    n, p, d_in = head["bits"], head["p"], head["d_in"]
    scheme, mode = head["scheme"], head["mode"]
    rtn = scheme == "rtn"
    if rtn:
        in_cb = _read_uniform(r, "inlier_codebook", n, True)
    else:
        in_cb = _read_kmeans(r, "inlier_codebook", n)
    out_cb = None
    sides_at = r.pos
    if p:
        if rtn:
            r.take(16, "outlier_codebooks")  # decoded once the sign bits are known
        else:
            out_cb = _read_kmeans(r, "outlier_codebook", n)

    layout = [(d_in - p, n)]
    if p:
        layout += [(p, 1), (p, n - 1)] if rtn else [(p, n)]
    total_bits = sum(c * w for c, w in layout)
    stream_at = r.pos
    stream = r.take(packed_size(total_bits, 1), "code_stream")
    if not trailing_bits_zero(stream, total_bits):
        r.fail("nonzero padding in code stream", "code_stream", stream_at)
    arrays, off = [], 0
    for c, w in layout:
        arrays.append(unpack_bits(stream, w, c, off))
        off += c * w
    in_codes = arrays[0]
    out_codes = arrays[-1] if p else np.zeros(0, dtype=np.int64)

    extra = {}
    if not rtn:
        for codes, cb, what in ((in_codes, in_cb, "inlier"), (out_codes, out_cb, "outlier")):
            if codes.size and codes.max() >= cb.centroids.size:
                r.fail(f"{what} code exceeds centroid count", "code_stream", stream_at)
        extra["outlier_codebook"] = out_cb
    elif p:
        signs = arrays[1].astype(bool)
        resume, r.pos = r.pos, sides_at
        extra["negative_codebook"] = _read_uniform(r, "negative_codebook", n - 1, bool(signs.any()))
        extra["positive_codebook"] = _read_uniform(r, "positive_codebook", n - 1, bool((~signs).any()))
        extra["outlier_signs"] = signs
        r.pos = resume

    counts = None
    if mode == "blockwise":
        n_blocks = -(-d_in // head["block_size"])
        counts = np.frombuffer(r.take(2 * n_blocks, "block_counts"), dtype="<u2").astype(np.uint16)
    gaps_at = r.pos
    packed = r.take(r.limit - r.pos, "gaps")
    try:
        gaps = from_bytes(packed, head["gap_width"], d_in, p, mode, head["block_size"], counts)
    except CorruptionError as exc:
        r.fail(f"invalid gap stream: {exc}", "gaps", gaps_at)
    return QuantizedRow(scheme, n, in_cb, in_codes, out_codes, **extra), gaps


def from_bytes_quantized(data: bytes) -> QuantizedTensor:
    """Parse and fully validate an ICQT file image.

    Raises:
        ParseError: names the offending field, its byte offset and, for
            per-row failures, the row index.  ChecksumError if only the CRC
            disagrees.
    """
    data = bytes(data)
    body_end = len(data) - 4
    r = _Reader(data, max(body_end, 0))
    magic, version, scheme, bits, gw, mode, block, d_out, d_in, p, gamma = r.unpack(_HEADER.format, "header")
    if magic != QUANT_MAGIC:
        r.fail(f"bad magic {magic!r}", "magic", 0)
    if version != VERSION:
        r.fail(f"unsupported version {version}", "version", 4)
    if scheme not in SCHEMES.values():
        r.fail(f"unknown scheme {scheme}", "scheme", 5)
    if not 1 <= bits <= 8:
        r.fail(f"bits {bits} outside [1, 8]", "bits", 6)
    if not MIN_WIDTH <= gw <= MAX_WIDTH:
        r.fail(f"gap width {gw} outside [{MIN_WIDTH}, {MAX_WIDTH}]", "gap_width", 7)
    if mode not in MODES.values():
        r.fail(f"unknown mode {mode}", "mode", 8)
    if (mode == MODES["blockwise"]) != (block > 0):
        r.fail("block_size must be set exactly in blockwise mode", "block_size", 9)
    if d_out < 1:
        r.fail("d_out must be positive", "d_out", 11)
    if d_in < 1:
        r.fail("d_in must be positive", "d_in", 15)
    if not (np.isfinite(gamma) and 0.0 <= gamma <= 0.5):
        r.fail(f"gamma {gamma} outside [0, 0.5]", "gamma", 23)
    if p != outlier_count(gamma, d_in):
        r.fail(f"outlier count {p} != floor(gamma*d_in)", "outliers_per_row", 19)
    scheme_name = "rtn" if scheme == SCHEMES["rtn"] else "sk"
    if scheme_name == "rtn" and p and bits < 2:
        r.fail("rtn outliers need at least 2 bits", "bits", 6)
    # every row needs at least its one-byte length prefix
    if d_out > body_end - r.pos:
        r.fail(f"d_out {d_out} exceeds remaining input", "d_out", 11)
    head = dict(
        bits=bits, p=p, d_in=d_in, scheme=scheme_name,
        mode="blockwise" if mode else "whole-row", block_size=block, gap_width=gw,
    )

    rows, gaps = [], []
    for i in range(d_out):
        r.row = i
        length = r.varint("section_length")
        end = r.pos + length
        if end > r.limit:
            r.take(length, "section")
        r.limit, r.eof = end, end
        q, g = _parse_row(r, head)
        r.limit, r.eof = body_end, len(data)
        rows.append(q)
        gaps.append(g)
    r.row = None
    if r.pos != body_end:
        r.fail(f"{body_end - r.pos} trailing bytes before checksum", "crc32", r.pos)
    (crc,) = struct.unpack("<I", data[body_end:])
    if crc != zlib.crc32(data[:body_end]):
        raise ChecksumError("checksum mismatch", "crc32", body_end)
    return QuantizedTensor(
        d_out, d_in, scheme_name, bits, gamma, gw, head["mode"], block, tuple(rows), tuple(gaps)
    )


def _write(sink, payload: bytes) -> int:
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(payload)
    else:
        sink.write(payload)
    return len(payload)


def _read(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def save_quantized(t: QuantizedTensor, sink: str | os.PathLike | BinaryIO) -> int:
    """Write ``t`` to a path or binary file object; returns the byte count."""
    return _write(sink, to_bytes(t))


def load_quantized(source) -> QuantizedTensor:
    return from_bytes_quantized(_read(source))


def raw_to_bytes(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.size == 0:
        raise ValidationError("raw tensors must be nonempty 2-D arrays")
    m = m.astype("<f4")
    if not np.all(np.isfinite(m)):
        raise ValidationError("raw tensors must be finite")
    return _RAW_HEADER.pack(RAW_MAGIC, VERSION, RAW_FLOAT32, 0, *m.shape) + m.tobytes()


def raw_from_bytes(data: bytes) -> np.ndarray:
    r = _Reader(data, len(data))
    magic, version, dtype, reserved, d_out, d_in = r.unpack(_RAW_HEADER.format, "header")
    if magic != RAW_MAGIC:
        r.fail(f"bad magic {magic!r}", "magic", 0)
    if version != VERSION:
        r.fail(f"unsupported version {version}", "version", 4)
    if dtype != RAW_FLOAT32:
        r.fail(f"unsupported element type {dtype}", "dtype", 5)
    if reserved:
        r.fail("reserved field must be zero", "reserved", 6)
    if d_out < 1 or d_in < 1:
        r.fail("dimensions must be positive", "dims", 8)
    expected = d_out * d_in * 4
    if len(data) - r.pos != expected:
        r.fail(f"payload is {len(data) - r.pos} bytes, expected {expected}", "payload", r.pos)
    m = np.frombuffer(data, dtype="<f4", offset=r.pos).reshape(d_out, d_in).astype(np.float32)
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.isfinite(m))[0])
        r.fail(f"non-finite value at element {bad}", "payload", r.pos + 4 * bad)
    return m


def save_raw(matrix, sink) -> int:
    return _write(sink, raw_to_bytes(matrix))


def load_raw(source) -> np.ndarray:
    return raw_from_bytes(_read(source))
