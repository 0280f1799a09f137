"""Binary snapshot and append-only insertion-log files.

Both formats are versioned with a magic header. The snapshot is a full dump
of a matrix plus gender attributes; the log records individual rating
insertions and is replayed over a snapshot at startup. A torn final log
record (crash during append) is tolerated and ignored.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Optional, Union

from .errors import ProtocolError
from .matrix import RatingScale, RatingsMatrix

SNAPSHOT_MAGIC = b"CFSN"
LOG_MAGIC = b"CFLG"
FORMAT_VERSION = 1

_GENDER_CODES = {"M": 0, "F": 1, "U": 2}
_GENDER_NAMES = {v: k for k, v in _GENDER_CODES.items()}
_RATING = struct.Struct(">QQi")


def write_snapshot(
    path: Union[str, Path],
    matrix: RatingsMatrix,
    attributes: Optional[dict[int, str]] = None,
) -> None:
    attributes = attributes or {}
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack(">B", FORMAT_VERSION))
        fh.write(struct.pack(">ii", matrix.scale.r_min, matrix.scale.r_max))
        fh.write(struct.pack(">Q", matrix.rating_count))
        for user, profile, value in matrix.iter_ratings():
            fh.write(_RATING.pack(user, profile, value))
        fh.write(struct.pack(">Q", len(attributes)))
        for user in sorted(attributes):
            fh.write(struct.pack(">QB", user, _GENDER_CODES[attributes[user]]))


def read_snapshot(path: Union[str, Path]) -> tuple[RatingsMatrix, dict[int, str]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ProtocolError(0, f"not a snapshot file (magic {magic!r})")
        (version,) = struct.unpack(">B", _read_exact(fh, 1))
        if version != FORMAT_VERSION:
            raise ProtocolError(0, f"unsupported snapshot version {version}")
        r_min, r_max = struct.unpack(">ii", _read_exact(fh, 8))
        matrix = RatingsMatrix(RatingScale(r_min, r_max))
        (count,) = struct.unpack(">Q", _read_exact(fh, 8))
        for _ in range(count):
            user, profile, value = _RATING.unpack(_read_exact(fh, _RATING.size))
            matrix.insert(user, profile, value)
        (attr_count,) = struct.unpack(">Q", _read_exact(fh, 8))
        attributes: dict[int, str] = {}
        for _ in range(attr_count):
            user, code = struct.unpack(">QB", _read_exact(fh, 9))
            attributes[user] = _GENDER_NAMES[code]
    return matrix, attributes


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ProtocolError(0, "truncated snapshot file")
    return data


class InsertionLog:
    """Append-only rating log; one fixed-width record per insertion."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        if self.path.exists() and self.path.stat().st_size > 0:
            self._fh = open(self.path, "r+b")
            header = self._fh.read(5)
            if header[:4] != LOG_MAGIC:
                raise ProtocolError(0, f"not an insertion log (magic {header[:4]!r})")
            if header[4] != FORMAT_VERSION:
                raise ProtocolError(0, f"unsupported log version {header[4]}")
            self._fh.seek(0, io.SEEK_END)
        else:
            self._fh = open(self.path, "wb")
            self._fh.write(LOG_MAGIC + struct.pack(">B", FORMAT_VERSION))
            self._fh.flush()

    def append(self, user: int, profile: int, value: int) -> None:
        self._fh.write(_RATING.pack(user, profile, value))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "InsertionLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def replay_log(path: Union[str, Path], matrix: RatingsMatrix) -> int:
    """Apply every complete log record to the matrix; returns records applied."""
    applied = 0
    with open(path, "rb") as fh:
        header = fh.read(5)
        if header[:4] != LOG_MAGIC:
            raise ProtocolError(0, f"not an insertion log (magic {header[:4]!r})")
        if header[4] != FORMAT_VERSION:
            raise ProtocolError(0, f"unsupported log version {header[4]}")
        while True:
            record = fh.read(_RATING.size)
            if len(record) < _RATING.size:
                break  # torn tail from an interrupted append: ignore
            user, profile, value = _RATING.unpack(record)
            matrix.insert(user, profile, value)
            applied += 1
    return applied
