"""Byte messages <-> payload bit matrices with Reed-Solomon protection.

Framing: a 2-byte big-endian length prefix is emitted first, followed by the
RS codewords of the message split into k-byte chunks (last chunk zero
padded). The resulting bitstream is packed MSB-first, row-major, into
successive n x n matrices, the last one zero padded. The prefix lets the
decoder strip both paddings without side information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rs import ReedSolomon

# Code-rate table by payload side: more parity as cells get smaller.
_RS_BY_SIDE = {16: 251, 32: 247, 48: 239, 64: 223, 80: 159, 96: 127}

_LENGTH_PREFIX_BITS = 16


@dataclass(frozen=True)
class RsParams:
    block_length: int = 255
    message_length: int = 223

    def __post_init__(self):
        if not (1 <= self.message_length < self.block_length <= 255):
            raise ValueError("require 1 <= k < n <= 255")

    @property
    def capacity(self) -> int:
        return (self.block_length - self.message_length) // 2

    def codec(self) -> ReedSolomon:
        return ReedSolomon(self.block_length, self.message_length)


class BitMatrix:
    """Square grid of payload bits, row 0 at the top."""

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError("bit matrix must be square")
        if bits.max(initial=0) > 1:
            raise ValueError("bits must be 0/1")
        self.bits = bits

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "BitMatrix":
        return cls(np.zeros((n, n), dtype=np.uint8))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "BitMatrix":
        return cls(rng.integers(0, 2, size=(n, n), dtype=np.uint8))

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)

    def __eq__(self, other):
        return isinstance(other, BitMatrix) and np.array_equal(self.bits, other.bits)


def select_rs_params(payload_side: int) -> RsParams:
    """Code rate used for each supported payload size."""
    if payload_side not in _RS_BY_SIDE:
        raise ValueError(
            f"no preset code rate for payload side {payload_side}; supply RsParams explicitly"
        )
    return RsParams(255, _RS_BY_SIDE[payload_side])


def encode_message(message: bytes, rs: RsParams, payload_side: int) -> list[BitMatrix]:
    """Encode a byte message into the payload frame sequence."""
    if len(message) == 0:
        raise ValueError("message must be nonempty")
    if len(message) >= 1 << 16:
        raise ValueError("message longer than the 2-byte length prefix allows")
    codec = rs.codec()
    k = rs.message_length
    chunks = [message[i : i + k] for i in range(0, len(message), k)]
    chunks[-1] = chunks[-1].ljust(k, b"\x00")

    bits = [np.array([(len(message) >> s) & 1 for s in range(15, -1, -1)], dtype=np.uint8)]
    for chunk in chunks:
        cw = np.frombuffer(codec.encode(chunk), dtype=np.uint8)
        bits.append(np.unpackbits(cw))
    stream = np.concatenate(bits)

    per_frame = payload_side * payload_side
    n_frames = -(-len(stream) // per_frame)
    stream = np.pad(stream, (0, n_frames * per_frame - len(stream)))
    return [
        BitMatrix(stream[i * per_frame : (i + 1) * per_frame].reshape(payload_side, payload_side))
        for i in range(n_frames)
    ]


def frames_for_message(message_len: int, rs: RsParams, payload_side: int) -> int:
    codewords = -(-message_len // rs.message_length)
    total_bits = _LENGTH_PREFIX_BITS + codewords * rs.block_length * 8
    return -(-total_bits // (payload_side * payload_side))


def decode_message(frames: list[BitMatrix], rs: RsParams) -> tuple[bytes, int, bool]:
    """Invert encode_message.

    Returns (message, total corrected symbols, uncorrectable flag). When a
    codeword cannot be repaired the unrepaired bytes are kept so callers can
    still inspect a best-effort message.
    """
    if not frames:
        raise ValueError("no frames to decode")
    side = frames[0].n
    if any(f.n != side for f in frames):
        raise ValueError("frames disagree on payload side")

    stream = np.concatenate([f.flat() for f in frames])
    length = int(np.packbits(stream[:_LENGTH_PREFIX_BITS]).view(">u2")[0])
    codec = rs.codec()
    codewords = -(-max(length, 1) // rs.message_length)
    need = _LENGTH_PREFIX_BITS + codewords * rs.block_length * 8
    uncorrectable = False
    if len(stream) < need:
        # The unprotected prefix was corrupted upward; salvage what is there.
        uncorrectable = True
        codewords = (len(stream) - _LENGTH_PREFIX_BITS) // (rs.block_length * 8)
        need = _LENGTH_PREFIX_BITS + codewords * rs.block_length * 8

    body = np.packbits(stream[_LENGTH_PREFIX_BITS : need])
    out = bytearray()
    corrected = 0
    for c in range(codewords):
        cw = body[c * rs.block_length : (c + 1) * rs.block_length].tobytes()
        result = codec.decode(cw)
        out.extend(result.message)
        corrected += result.corrected_symbols
        uncorrectable |= result.uncorrectable
    return bytes(out[:length]), corrected, uncorrectable


def bit_error_rate(sent: list[BitMatrix], received: list[BitMatrix]) -> float:
    """Hamming distance over total bit count, before error correction."""
    if len(sent) != len(received):
        raise ValueError("streams differ in frame count")
    total = errors = 0
    for a, b in zip(sent, received):
        if a.n != b.n:
            raise ValueError("frames differ in payload side")
        errors += int(np.count_nonzero(a.bits != b.bits))
        total += a.n * a.n
    if total == 0:
        raise ValueError("empty streams")
    return errors / total


def throughput_ceiling_bps(payload_side: int, rs: RsParams, data_rate_hz: float) -> float:
    """Accounting ceiling: payload bits/s scaled by the code rate."""
    return payload_side**2 * data_rate_hz * rs.message_length / rs.block_length


def effective_throughput_bps(
    message_len: int, rs: RsParams, payload_side: int, data_rate_hz: float
) -> float:
    """Net message bits per second of air time, including framing overhead.

    Air time is the duration of the data frames that carry one message; the
    prefix, RS parity and frame padding all count against the rate.
    """
    frames = frames_for_message(message_len, rs, payload_side)
    return 8.0 * message_len / (frames / data_rate_hz)
