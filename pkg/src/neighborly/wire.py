"""Binary request/response framing and payload codecs for the TCP services.

Frame layout (9-byte header, big-endian):

    offset  size  field
    0       2     magic 0x43 0x46 ("CF")
    2       1     protocol version (0x01)
    3       1     kind: 0 request, 1 response, 2 error
    4       1     method id
    5       4     payload length (unsigned), at most 16 MiB
    9       n     payload

Payloads are fixed-width integers and IEEE-754 doubles in the field order
documented in docs/protocol.md; strings are u16-length-prefixed UTF-8. The
decoder is incremental: partial input means "need more bytes", never an
error; a malformed header (bad magic, unsupported version, oversized
payload) is a protocol error that closes the connection.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

from .errors import ProtocolError
from .estimators import Prediction, SKIP_REASONS
from .matrix import DatasetStats

MAGIC = b"CF"
VERSION = 1
HEADER = struct.Struct(">2sBBBI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 16 * 1024 * 1024

KIND_REQUEST = 0
KIND_RESPONSE = 1
KIND_ERROR = 2
KINDS = (KIND_REQUEST, KIND_RESPONSE, KIND_ERROR)

# method ids; each service owns a disjoint 16-id block
METHOD_PREDICT = 1
METHOD_RECOMMEND = 16
METHOD_INSERT = 32
METHOD_PREDICT_INSERT = 33
METHOD_STATS = 48
METHOD_ALGORITHMS = 49

SERVICE_METHODS: dict[str, frozenset[int]] = {
    "prediction": frozenset({METHOD_PREDICT}),
    "recommendation": frozenset({METHOD_RECOMMEND}),
    "mutation": frozenset({METHOD_INSERT, METHOD_PREDICT_INSERT}),
    "statistics": frozenset({METHOD_STATS, METHOD_ALGORITHMS}),
}
ALL_METHODS = frozenset().union(*SERVICE_METHODS.values())

# error codes carried by error frames
ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_OVERSIZE = 3
ERR_MALFORMED = 4
ERR_UNKNOWN_METHOD = 5
ERR_WRONG_SERVICE = 6
ERR_BAD_KIND = 7
ERR_UNKNOWN_ALGORITHM = 10
ERR_UNKNOWN_ENTITY = 11
ERR_OUT_OF_SCALE = 12
ERR_LIMIT_EXCEEDED = 13
ERR_INVALID_ARGUMENT = 14
ERR_INTERNAL = 15

FATAL_ERRORS = frozenset({ERR_BAD_MAGIC, ERR_BAD_VERSION, ERR_OVERSIZE, ERR_BAD_KIND})

RECOMMEND_MAX_N = 1000


@dataclass(frozen=True)
class Frame:
    kind: int
    method: int
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if frame.kind not in KINDS:
        raise ProtocolError(ERR_BAD_KIND, f"unknown frame kind {frame.kind}")
    if not 0 <= frame.method <= 255:
        raise ProtocolError(ERR_MALFORMED, f"method id {frame.method} does not fit a byte")
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError(ERR_OVERSIZE, f"payload of {len(frame.payload)} bytes exceeds 16 MiB")
    return HEADER.pack(MAGIC, VERSION, frame.kind, frame.method, len(frame.payload)) + frame.payload


def try_decode(buffer: bytes) -> Optional[tuple[Frame, int]]:
    """Decode one frame from the head of `buffer`.

    Returns (frame, bytes consumed), or None when more bytes are needed.
    Raises ProtocolError for an unusable header."""
    if len(buffer) < HEADER_SIZE:
        return None
    magic, version, kind, method, length = HEADER.unpack_from(buffer)
    if magic != MAGIC:
        raise ProtocolError(ERR_BAD_MAGIC, f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(ERR_BAD_VERSION, f"unsupported protocol version {version}")
    if kind not in KINDS:
        raise ProtocolError(ERR_BAD_KIND, f"unknown frame kind {kind}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_OVERSIZE, f"declared payload of {length} bytes exceeds 16 MiB")
    end = HEADER_SIZE + length
    if len(buffer) < end:
        return None
    return Frame(kind, method, bytes(buffer[HEADER_SIZE:end])), end


class FrameDecoder:
    """Stateful incremental decoder over a byte stream."""

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buffer.extend(data)
        frames = []
        while True:
            decoded = try_decode(self._buffer)
            if decoded is None:
                return frames
            frame, consumed = decoded
            del self._buffer[:consumed]
            frames.append(frame)

    @property
    def pending(self) -> int:
        return len(self._buffer)


# -- payload primitives -------------------------------------------------------


class PayloadWriter:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack(">H", v))
        return self

    def u64(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack(">Q", v))
        return self

    def i32(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack(">i", v))
        return self

    def f64(self, v: float) -> "PayloadWriter":
        self._parts.append(struct.pack(">d", v))
        return self

    def string(self, v: str) -> "PayloadWriter":
        raw = v.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ProtocolError(ERR_MALFORMED, "string field longer than 65535 bytes")
        self._parts.append(struct.pack(">H", len(raw)) + raw)
        return self

    def bytes(self) -> bytes:
        return b"".join(self._parts)


class PayloadReader:
    def __init__(self, payload: bytes):
        self._data = payload
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ProtocolError(ERR_MALFORMED, "truncated payload")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i32(self) -> int:
        return struct.unpack(">i", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def string(self) -> str:
        length = self.u16()
        return self._take(length).decode("utf-8")

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise ProtocolError(
                ERR_MALFORMED, f"{len(self._data) - self._pos} unexpected trailing bytes"
            )


# -- message codecs -----------------------------------------------------------
# Requests and responses per method, in documented field order. Encoders and
# decoders are exact inverses so client and server share one vocabulary.

_SKIP_CODES = {reason: i + 1 for i, reason in enumerate(SKIP_REASONS)}
_SKIP_NAMES = {i: reason for reason, i in _SKIP_CODES.items()}


def encode_predict_request(algo_id: int, user: int, profile: int) -> bytes:
    return PayloadWriter().u8(algo_id).u64(user).u64(profile).bytes()


def decode_predict_request(payload: bytes) -> tuple[int, int, int]:
    r = PayloadReader(payload)
    out = (r.u8(), r.u64(), r.u64())
    r.expect_end()
    return out


def encode_prediction(p: Prediction) -> bytes:
    w = PayloadWriter()
    if p.is_skipped:
        w.u8(1).f64(0.0).u8(_SKIP_CODES[p.skip_reason])
    else:
        w.u8(0).f64(p.value).u8(0)
    return w.bytes()


def _read_prediction(r: PayloadReader) -> Prediction:
    outcome = r.u8()
    value = r.f64()
    reason = r.u8()
    if outcome == 0:
        if math.isnan(value):
            raise ProtocolError(ERR_MALFORMED, "NaN prediction value")
        return Prediction.of(value)
    if outcome == 1:
        if reason not in _SKIP_NAMES:
            raise ProtocolError(ERR_MALFORMED, f"unknown skip reason code {reason}")
        return Prediction.skipped(_SKIP_NAMES[reason])
    raise ProtocolError(ERR_MALFORMED, f"unknown prediction outcome {outcome}")


def decode_prediction(payload: bytes) -> Prediction:
    r = PayloadReader(payload)
    p = _read_prediction(r)
    r.expect_end()
    return p


def encode_recommend_request(algo_id: int, user: int, n: int, opposite_sex_only: bool) -> bytes:
    flags = 1 if opposite_sex_only else 0
    return PayloadWriter().u8(algo_id).u64(user).u16(n).u8(flags).bytes()


def decode_recommend_request(payload: bytes) -> tuple[int, int, int, bool]:
    r = PayloadReader(payload)
    algo_id, user, n, flags = r.u8(), r.u64(), r.u16(), r.u8()
    r.expect_end()
    return algo_id, user, n, bool(flags & 1)


def encode_recommendations(user: int, entries: list[tuple[int, float]]) -> bytes:
    w = PayloadWriter().u64(user).u16(len(entries))
    for profile, score in entries:
        w.u64(profile).f64(score)
    return w.bytes()


def decode_recommendations(payload: bytes) -> tuple[int, list[tuple[int, float]]]:
    r = PayloadReader(payload)
    user = r.u64()
    count = r.u16()
    entries = [(r.u64(), r.f64()) for _ in range(count)]
    r.expect_end()
    return user, entries


def encode_insert_request(user: int, profile: int, value: int) -> bytes:
    return PayloadWriter().u64(user).u64(profile).i32(value).bytes()


def decode_insert_request(payload: bytes) -> tuple[int, int, int]:
    r = PayloadReader(payload)
    out = (r.u64(), r.u64(), r.i32())
    r.expect_end()
    return out


def encode_insert_response(previous: Optional[int], seq: int) -> bytes:
    w = PayloadWriter()
    w.u8(0 if previous is None else 1).i32(previous if previous is not None else 0)
    w.u64(seq)
    return w.bytes()


def decode_insert_response(payload: bytes) -> tuple[Optional[int], int]:
    r = PayloadReader(payload)
    has_prev, prev, seq = r.u8(), r.i32(), r.u64()
    r.expect_end()
    return (prev if has_prev else None), seq


def encode_predict_insert_request(algo_id: int, user: int, profile: int, value: int) -> bytes:
    return PayloadWriter().u8(algo_id).u64(user).u64(profile).i32(value).bytes()


def decode_predict_insert_request(payload: bytes) -> tuple[int, int, int, int]:
    r = PayloadReader(payload)
    out = (r.u8(), r.u64(), r.u64(), r.i32())
    r.expect_end()
    return out


def encode_predict_insert_response(p: Prediction, previous: Optional[int], seq: int) -> bytes:
    return encode_prediction(p) + encode_insert_response(previous, seq)


def decode_predict_insert_response(payload: bytes) -> tuple[Prediction, Optional[int], int]:
    r = PayloadReader(payload)
    p = _read_prediction(r)
    has_prev, prev, seq = r.u8(), r.i32(), r.u64()
    r.expect_end()
    return p, (prev if has_prev else None), seq


def encode_stats(stats: DatasetStats) -> bytes:
    w = PayloadWriter()
    w.u64(stats.total_users).u64(stats.users_with_ratings)
    w.u64(stats.items_with_ratings).u64(stats.rating_count)
    w.u8(0 if stats.density_permille is None else 1)
    w.f64(stats.density_permille or 0.0)
    w.u64(stats.max_ratings_one_user).u64(stats.max_ratings_one_profile)
    w.u8(0 if stats.mean is None else 1)
    w.f64(stats.mean or 0.0).f64(stats.median or 0.0).f64(stats.sd or 0.0)
    return w.bytes()


def decode_stats(payload: bytes) -> DatasetStats:
    r = PayloadReader(payload)
    total = r.u64()
    with_ratings = r.u64()
    items = r.u64()
    count = r.u64()
    has_density = r.u8()
    density = r.f64()
    max_user = r.u64()
    max_profile = r.u64()
    has_moments = r.u8()
    mean, median, sd = r.f64(), r.f64(), r.f64()
    r.expect_end()
    return DatasetStats(
        total_users=total,
        users_with_ratings=with_ratings,
        items_with_ratings=items,
        rating_count=count,
        density_permille=density if has_density else None,
        max_ratings_one_user=max_user,
        max_ratings_one_profile=max_profile,
        mean=mean if has_moments else None,
        median=median if has_moments else None,
        sd=sd if has_moments else None,
    )


def encode_algorithms(roster: list[tuple[int, str]]) -> bytes:
    w = PayloadWriter().u8(len(roster))
    for algo_id, name in roster:
        w.u8(algo_id).string(name)
    return w.bytes()


def decode_algorithms(payload: bytes) -> list[tuple[int, str]]:
    r = PayloadReader(payload)
    count = r.u8()
    roster = [(r.u8(), r.string()) for _ in range(count)]
    r.expect_end()
    return roster


def encode_error(code: int, message: str) -> bytes:
    return PayloadWriter().u16(code).string(message).bytes()


def decode_error(payload: bytes) -> tuple[int, str]:
    r = PayloadReader(payload)
    out = (r.u16(), r.string())
    r.expect_end()
    return out
