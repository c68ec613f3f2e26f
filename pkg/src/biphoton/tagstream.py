"""Time-tag data model and the `.ttag` binary stream format.

File layout (all little-endian):

    header, 34 bytes:
        magic          4 bytes  b"TTAG"
        version        u16      currently 1
        tick_ps        u32      picoseconds per tick
        channel_count  u16      number of device channels (>= 7)
        channel ids    7 x u16  mcp, dld_x1, dld_x2, dld_y1, dld_y2, snspd, sync
        record_count   u64      0 means unknown / streaming
    records, 12 bytes each:
        channel        u16
        reserved       u16      zero
        timestamp      u64      tick count

Records are sorted by (timestamp, channel). Identical input produces a
byte-identical file.
"""

import heapq
import struct
from dataclasses import dataclass, fields
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

MAGIC = b"TTAG"
VERSION = 1
HEADER_SIZE = 34
RECORD_SIZE = 12

_HEADER_STRUCT = struct.Struct("<4sHIH7HQ")

#: in-memory representation of a tag sequence
TAG_DTYPE = np.dtype([("channel", "<u2"), ("timestamp", "<u8")])

#: on-disk record layout
RECORD_DTYPE = np.dtype([("channel", "<u2"), ("reserved", "<u2"), ("timestamp", "<u8")])


class StreamFormatError(Exception):
    """Base class for malformed `.ttag` data."""


class BadMagicError(StreamFormatError):
    pass


class UnsupportedVersionError(StreamFormatError):
    pass


class TruncatedStreamError(StreamFormatError):
    def __init__(self, message, byte_offset):
        super().__init__(f"{message} (at byte offset {byte_offset})")
        self.byte_offset = byte_offset


class UnsortedTagsError(ValueError):
    def __init__(self, index):
        super().__init__(f"tags not sorted by (timestamp, channel): first violation at index {index}")
        self.index = index


class UnknownChannelError(ValueError):
    def __init__(self, index, channel):
        super().__init__(f"tag {index} uses channel {channel} which is not in the channel map")
        self.index = index
        self.channel = channel


class TimeTag(NamedTuple):
    channel: int
    timestamp: int


@dataclass(frozen=True)
class ChannelMap:
    """Role assignment for the seven instrument channels."""

    mcp: int = 0
    dld_x1: int = 1
    dld_x2: int = 2
    dld_y1: int = 3
    dld_y2: int = 4
    snspd: int = 5
    sync: int = 6

    def __post_init__(self):
        ids = self.ids()
        if len(set(ids)) != 7:
            raise ValueError(f"channel ids must be distinct, got {ids}")
        if any(c < 0 or c > 0xFFFF for c in ids):
            raise ValueError(f"channel ids must fit in u16, got {ids}")

    def ids(self):
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass
class StreamHeader:
    tick_ps: int = 25
    channel_count: int = 7
    channel_map: ChannelMap = ChannelMap()
    record_count: int = 0
    version: int = VERSION

    def __post_init__(self):
        if self.tick_ps < 1:
            raise ValueError(f"tick_ps must be >= 1, got {self.tick_ps}")
        if self.channel_count < 7:
            raise ValueError(f"channel_count must be >= 7, got {self.channel_count}")

    def to_bytes(self):
        return _HEADER_STRUCT.pack(
            MAGIC, self.version, self.tick_ps, self.channel_count,
            *self.channel_map.ids(), self.record_count,
        )

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise BadMagicError(f"expected magic {MAGIC!r}, got {raw[:4]!r}")
        if len(raw) < HEADER_SIZE:
            raise TruncatedStreamError("incomplete header", len(raw))
        magic, version, tick_ps, channel_count, *ids, record_count = _HEADER_STRUCT.unpack(raw[:HEADER_SIZE])
        if version != VERSION:
            raise UnsupportedVersionError(f"unsupported stream version {version}")
        header = cls(tick_ps=tick_ps, channel_count=channel_count,
                     channel_map=ChannelMap(*ids), record_count=record_count,
                     version=version)
        return header


def as_tag_array(tags):
    """Coerce an iterable of (channel, timestamp) pairs or a structured array
    to the packed TAG_DTYPE array used internally."""
    if isinstance(tags, np.ndarray) and tags.dtype == TAG_DTYPE:
        return tags
    if isinstance(tags, np.ndarray) and tags.dtype.names == ("channel", "timestamp"):
        return tags.astype(TAG_DTYPE)
    rows = [(int(c), int(t)) for c, t in tags]
    return np.array(rows, dtype=TAG_DTYPE)


def empty_tags(n=0):
    return np.zeros(n, dtype=TAG_DTYPE)


def first_order_violation(tags):
    """Index of the first tag breaking the (timestamp, channel) sort order,
    or None when sorted."""
    tags = as_tag_array(tags)
    if len(tags) < 2:
        return None
    t, c = tags["timestamp"], tags["channel"]
    earlier = t[1:] < t[:-1]
    tie_break = (t[1:] == t[:-1]) & (c[1:] < c[:-1])
    bad = np.flatnonzero(earlier | tie_break)
    if bad.size == 0:
        return None
    return int(bad[0]) + 1


def write_stream(header, tags, sink: BinaryIO):
    """Write header + records to a binary sink. Returns the byte count.

    Tags must be sorted by (timestamp, channel) and use only mapped channels.
    """
    tags = as_tag_array(tags)
    violation = first_order_violation(tags)
    if violation is not None:
        raise UnsortedTagsError(violation)
    allowed = np.array(header.channel_map.ids(), dtype=np.uint16)
    if len(tags):
        ok = np.isin(tags["channel"], allowed)
        if not ok.all():
            idx = int(np.flatnonzero(~ok)[0])
            raise UnknownChannelError(idx, int(tags["channel"][idx]))

    header = StreamHeader(tick_ps=header.tick_ps, channel_count=header.channel_count,
                          channel_map=header.channel_map, record_count=len(tags),
                          version=header.version)
    sink.write(header.to_bytes())
    records = np.zeros(len(tags), dtype=RECORD_DTYPE)
    records["channel"] = tags["channel"]
    records["timestamp"] = tags["timestamp"]
    sink.write(records.tobytes())
    return HEADER_SIZE + RECORD_SIZE * len(tags)


def _read_header(source: BinaryIO):
    raw = source.read(HEADER_SIZE)
    return StreamHeader.from_bytes(raw)


def iter_stream_blocks(source: BinaryIO, block_records=1 << 20):
    """Read the header eagerly, then yield TAG_DTYPE arrays in bounded blocks.

    Returns (header, block_iterator). Single pass; memory bounded by
    block_records.
    """
    header = _read_header(source)

    def blocks():
        offset = HEADER_SIZE
        seen = 0
        while True:
            raw = source.read(RECORD_SIZE * block_records)
            if not raw:
                break
            whole, leftover = divmod(len(raw), RECORD_SIZE)
            if leftover:
                raise TruncatedStreamError("stream truncated mid-record",
                                           offset + whole * RECORD_SIZE)
            records = np.frombuffer(raw, dtype=RECORD_DTYPE)
            out = np.zeros(len(records), dtype=TAG_DTYPE)
            out["channel"] = records["channel"]
            out["timestamp"] = records["timestamp"]
            offset += len(raw)
            seen += len(records)
            yield out
        if header.record_count and seen < header.record_count:
            raise TruncatedStreamError(
                f"header declares {header.record_count} records, found {seen}", offset)

    return header, blocks()


def read_stream(source: BinaryIO, block_records=1 << 16):
    """Lazy reader: returns (header, iterator of TimeTag)."""
    header, blocks = iter_stream_blocks(source, block_records=block_records)

    def tags() -> Iterator[TimeTag]:
        for block in blocks:
            for c, t in zip(block["channel"], block["timestamp"]):
                yield TimeTag(int(c), int(t))

    return header, tags()


def read_stream_arrays(source: BinaryIO):
    """Eager reader: returns (header, TAG_DTYPE array with all records)."""
    header, blocks = iter_stream_blocks(source)
    parts = list(blocks)
    if not parts:
        return header, empty_tags()
    return header, np.concatenate(parts)


def merge_sorted(streams: Iterable):
    """K-way merge of (timestamp, channel)-sorted tag sequences.

    Accepts TAG_DTYPE arrays or TimeTag iterables; returns a TAG_DTYPE array.
    The tag multiset is preserved.
    """
    iters = []
    for s in streams:
        arr = as_tag_array(s)
        iters.append((TimeTag(int(c), int(t)) for c, t in zip(arr["channel"], arr["timestamp"])))
    merged = heapq.merge(*iters, key=lambda tag: (tag.timestamp, tag.channel))
    return as_tag_array(list(merged)) if iters else empty_tags()
