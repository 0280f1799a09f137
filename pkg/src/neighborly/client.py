"""Blocking TCP client for one service port. One request in flight at a time."""

from __future__ import annotations

import socket
from typing import Optional

from . import wire
from .errors import ProtocolError, RemoteError
from .estimators import Prediction, RecommendationList
from .matrix import DatasetStats


class ServiceClient:
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._decoder = wire.FrameDecoder()
        self._frames: list[wire.Frame] = []

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def call(self, method: int, payload: bytes = b"") -> bytes:
        """Send one request frame and return the matching response payload.

        Error frames raise RemoteError with the server's code and message."""
        request = wire.Frame(wire.KIND_REQUEST, method, payload)
        self._sock.sendall(wire.encode_frame(request))
        frame = self._next_frame()
        if frame.kind == wire.KIND_ERROR:
            code, message = wire.decode_error(frame.payload)
            raise RemoteError(code, message)
        if frame.kind != wire.KIND_RESPONSE or frame.method != method:
            raise ProtocolError(
                wire.ERR_MALFORMED,
                f"unexpected frame kind={frame.kind} method={frame.method}",
            )
        return frame.payload

    def _next_frame(self) -> wire.Frame:
        while not self._frames:
            data = self._sock.recv(65536)
            if not data:
                raise ProtocolError(wire.ERR_MALFORMED, "connection closed mid-response")
            self._frames.extend(self._decoder.feed(data))
        return self._frames.pop(0)

    # -- typed wrappers --------------------------------------------------------

    def predict(self, algo_id: int, user: int, profile: int) -> Prediction:
        payload = self.call(
            wire.METHOD_PREDICT, wire.encode_predict_request(algo_id, user, profile)
        )
        return wire.decode_prediction(payload)

    def recommend(
        self, algo_id: int, user: int, n: int = 10, opposite_sex_only: bool = False
    ) -> RecommendationList:
        payload = self.call(
            wire.METHOD_RECOMMEND,
            wire.encode_recommend_request(algo_id, user, n, opposite_sex_only),
        )
        for_user, entries = wire.decode_recommendations(payload)
        return RecommendationList(for_user=for_user, entries=entries)

    def insert(self, user: int, profile: int, value: int) -> tuple[Optional[int], int]:
        payload = self.call(
            wire.METHOD_INSERT, wire.encode_insert_request(user, profile, value)
        )
        return wire.decode_insert_response(payload)

    def predict_insert(
        self, algo_id: int, user: int, profile: int, value: int
    ) -> tuple[Prediction, Optional[int], int]:
        payload = self.call(
            wire.METHOD_PREDICT_INSERT,
            wire.encode_predict_insert_request(algo_id, user, profile, value),
        )
        return wire.decode_predict_insert_response(payload)

    def stats(self) -> DatasetStats:
        return wire.decode_stats(self.call(wire.METHOD_STATS))

    def algorithms(self) -> list[tuple[int, str]]:
        return wire.decode_algorithms(self.call(wire.METHOD_ALGORITHMS))
