"""Binary spike stream container and the .spk on-disk codec.

File layout (integers little-endian):

    offset  size  field
    0       4     magic b"SPKS"
    4       1     format version, currently 1
    5       4     u32 width
    9       4     u32 height
    13      4     u32 num_ticks
    17      ...   payload

The payload is a single continuous bitstream over (tick, row, col) in
that order, packed LSB-first into bytes and zero-padded to a byte
boundary at the end. Example: a 1x1x8 stream with tick bits 1,0,1,1,0,
0,0,1 packs to the single byte 0x8D. Per-tick random access works on bit
offsets (frame f spans bits [f*W*H, (f+1)*W*H)), so seeking never needs
the whole payload in memory.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "SpikeStream",
    "DecodeError",
    "encode_stream",
    "decode_stream",
    "write_spk",
    "read_spk",
    "read_spk_header",
    "read_spk_frame",
    "iter_spk_frames",
    "write_spk_frames",
]

_MAGIC = b"SPKS"
_VERSION = 1
_HEADER = struct.Struct("<4sBIII")
_MAX_BITS = 1 << 43  # 1 TiB of payload; larger headers are treated as corrupt


class DecodeError(ValueError):
    pass


@dataclass
class SpikeStream:
    """Binary spikes, shape [num_ticks, H, W], values exactly 0 or 1."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.ndim != 3:
            raise ValueError(f"spike stream must be [T, H, W], got ndim={self.bits.ndim}")
        if self.bits.shape[0] < 1:
            raise ValueError("spike stream needs at least one tick")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("spike stream values must be 0 or 1")
        self.bits = self.bits.astype(np.uint8)

    @property
    def num_ticks(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def firing_rate(self) -> float:
        return float(self.bits.mean())


def _header_bytes(width: int, height: int, num_ticks: int) -> bytes:
    return _HEADER.pack(_MAGIC, _VERSION, width, height, num_ticks)


def encode_stream(stream: SpikeStream) -> bytes:
    payload = np.packbits(stream.bits.reshape(-1), bitorder="little").tobytes()
    return _header_bytes(stream.width, stream.height, stream.num_ticks) + payload


def _parse_header(data: bytes) -> tuple[int, int, int]:
    if len(data) < _HEADER.size:
        raise DecodeError("truncated header")
    magic, version, width, height, num_ticks = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DecodeError("bad magic: not a spike stream")
    if version != _VERSION:
        raise DecodeError(f"unsupported version {version}")
    if num_ticks == 0:
        raise DecodeError("zero ticks")
    if width == 0 or height == 0:
        raise DecodeError("zero frame dimension")
    if width * height * num_ticks > _MAX_BITS:
        raise DecodeError("dimension overflow")
    return width, height, num_ticks


def decode_stream(data: bytes) -> SpikeStream:
    width, height, num_ticks = _parse_header(data)
    total_bits = width * height * num_ticks
    needed = (total_bits + 7) // 8
    payload = data[_HEADER.size :]
    if len(payload) < needed:
        raise DecodeError(f"truncated payload: have {len(payload)} bytes, need {needed}")
    if len(payload) > needed:
        raise DecodeError(f"{len(payload) - needed} trailing bytes after payload")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=total_bits, bitorder="little")
    return SpikeStream(bits.reshape(num_ticks, height, width))


def write_spk(stream: SpikeStream, path: str | Path) -> None:
    Path(path).write_bytes(encode_stream(stream))


def read_spk(path: str | Path) -> SpikeStream:
    return decode_stream(Path(path).read_bytes())


def read_spk_header(path: str | Path) -> tuple[int, int, int]:
    """(width, height, num_ticks) without touching the payload."""
    with open(path, "rb") as f:
        return _parse_header(f.read(_HEADER.size))


def read_spk_frame(path: str | Path, tick: int) -> np.ndarray:
    """Random access to one tick; reads only the bytes spanning its bits."""
    width, height, num_ticks = read_spk_header(path)
    if not 0 <= tick < num_ticks:
        raise IndexError(f"tick {tick} out of range [0, {num_ticks})")
    frame_bits = width * height
    start_bit = tick * frame_bits
    end_bit = start_bit + frame_bits
    byte_lo = start_bit // 8
    byte_hi = (end_bit + 7) // 8
    with open(path, "rb") as f:
        f.seek(_HEADER.size + byte_lo)
        raw = f.read(byte_hi - byte_lo)
    if len(raw) < byte_hi - byte_lo:
        raise DecodeError("truncated payload")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    offset = start_bit - byte_lo * 8
    return bits[offset : offset + frame_bits].reshape(height, width)


def iter_spk_frames(path: str | Path) -> Iterator[np.ndarray]:
    """Stream frames one at a time; memory use is one frame plus carry bits."""
    width, height, num_ticks = read_spk_header(path)
    frame_bits = width * height
    with open(path, "rb") as f:
        f.seek(_HEADER.size)
        carry = np.zeros(0, dtype=np.uint8)
        for _ in range(num_ticks):
            need_bytes = (frame_bits - carry.size + 7) // 8
            raw = f.read(need_bytes)
            if len(raw) < need_bytes:
                raise DecodeError("truncated payload")
            bits = np.concatenate([carry, np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")])
            yield bits[:frame_bits].reshape(height, width).copy()
            carry = bits[frame_bits:]


def write_spk_frames(path: str | Path, frames: Iterator[np.ndarray], width: int, height: int, num_ticks: int) -> None:
    """Streaming encoder: frames arrive one at a time, bits carry across
    frame boundaries so the output is identical to encode_stream."""
    if num_ticks < 1:
        raise ValueError("num_ticks must be >= 1")
    written = 0
    with open(path, "wb") as f:
        f.write(_header_bytes(width, height, num_ticks))
        carry = np.zeros(0, dtype=np.uint8)
        for frame in frames:
            frame = np.asarray(frame)
            if frame.shape != (height, width):
                raise ValueError(f"frame shape {frame.shape} != ({height}, {width})")
            bits = np.concatenate([carry, frame.reshape(-1).astype(np.uint8)])
            whole = (bits.size // 8) * 8
            f.write(np.packbits(bits[:whole], bitorder="little").tobytes())
            carry = bits[whole:]
            written += 1
        if written != num_ticks:
            raise ValueError(f"got {written} frames, header promised {num_ticks}")
        if carry.size:
            f.write(np.packbits(carry, bitorder="little").tobytes())
