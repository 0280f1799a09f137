"""Stateless TCP server: one listening port per service, one shared data
manager.

Each connection is handled by its own thread; requests are processed one at
a time per connection (no pipelining), and no session state survives between
requests. Application errors produce an error frame and leave the connection
usable; unusable bytes (bad magic, wrong version, oversized payload) produce
an error frame and close the connection.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import Optional

from . import wire
from .errors import OutOfScaleError, ProtocolError, UnknownEntityError
from .manager import DataManager

log = logging.getLogger(__name__)

DEFAULT_PORTS = {
    "prediction": 5251,
    "recommendation": 5252,
    "mutation": 5253,
    "statistics": 5254,
}


class Server:
    """Binds every configured service to its own port against one DataManager.

    Pass port 0 to let the OS choose; the bound ports are available from
    `ports` after start(). start()/stop() are idempotent enough for tests:
    stop closes the listeners and all live connections.
    """

    def __init__(
        self,
        dm: DataManager,
        services: Optional[dict[str, int]] = None,
        host: str = "127.0.0.1",
    ):
        services = DEFAULT_PORTS if services is None else services
        unknown = set(services) - set(wire.SERVICE_METHODS)
        if unknown:
            raise ValueError(f"unknown services: {sorted(unknown)}")
        self.dm = dm
        self.host = host
        self._requested = dict(services)
        self.ports: dict[str, int] = {}
        self._listeners: dict[str, socket.socket] = {}
        self._threads: list[threading.Thread] = []
        self._connections: set[socket.socket] = set()
        self._conn_lock = threading.Lock()
        self._running = False

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Server":
        if self._running:
            return self
        for service, port in self._requested.items():
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                listener.bind((self.host, port))
            except OSError:
                listener.close()
                self._close_listeners()
                raise
            listener.listen(128)
            self._listeners[service] = listener
            self.ports[service] = listener.getsockname()[1]
        self._running = True
        for service, listener in self._listeners.items():
            t = threading.Thread(
                target=self._accept_loop,
                args=(service, listener),
                name=f"accept-{service}",
                daemon=True,
            )
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._running = False
        self._close_listeners()
        with self._conn_lock:
            conns = list(self._connections)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()
        self.dm.close()

    def _close_listeners(self) -> None:
        for listener in self._listeners.values():
            try:
                listener.close()
            except OSError:
                pass
        self._listeners.clear()

    def __enter__(self) -> "Server":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- connection handling ---------------------------------------------------

    def _accept_loop(self, service: str, listener: socket.socket) -> None:
        methods = wire.SERVICE_METHODS[service]
        while self._running:
            try:
                conn, _addr = listener.accept()
            except OSError:
                return  # listener closed
            with self._conn_lock:
                self._connections.add(conn)
            t = threading.Thread(
                target=self._serve_connection,
                args=(conn, methods),
                name=f"conn-{service}",
                daemon=True,
            )
            t.start()

    def _serve_connection(self, conn: socket.socket, methods: frozenset[int]) -> None:
        decoder = wire.FrameDecoder()
        try:
            while True:
                try:
                    data = conn.recv(65536)
                except OSError:
                    return
                if not data:
                    return
                try:
                    frames = decoder.feed(data)
                except ProtocolError as exc:
                    self._send(conn, _error_frame(0, exc.code, str(exc)))
                    return  # unusable byte stream: close
                for frame in frames:
                    response = self._handle(frame, methods)
                    self._send(conn, response)
        finally:
            with self._conn_lock:
                self._connections.discard(conn)
            conn.close()

    def _send(self, conn: socket.socket, frame: wire.Frame) -> None:
        try:
            conn.sendall(wire.encode_frame(frame))
        except OSError:
            pass

    # -- dispatch ---------------------------------------------------------------

    def _handle(self, frame: wire.Frame, methods: frozenset[int]) -> wire.Frame:
        if frame.kind != wire.KIND_REQUEST:
            return _error_frame(frame.method, wire.ERR_BAD_KIND, "expected a request frame")
        if frame.method not in wire.ALL_METHODS:
            return _error_frame(
                frame.method, wire.ERR_UNKNOWN_METHOD, f"unknown method {frame.method}"
            )
        if frame.method not in methods:
            return _error_frame(
                frame.method,
                wire.ERR_WRONG_SERVICE,
                f"method {frame.method} is not served on this port",
            )
        try:
            payload = self._dispatch(frame.method, frame.payload)
        except ProtocolError as exc:
            return _error_frame(frame.method, exc.code, str(exc))
        except UnknownEntityError as exc:
            code = (
                wire.ERR_UNKNOWN_ALGORITHM
                if "algorithm" in str(exc)
                else wire.ERR_UNKNOWN_ENTITY
            )
            return _error_frame(frame.method, code, str(exc))
        except OutOfScaleError as exc:
            return _error_frame(frame.method, wire.ERR_OUT_OF_SCALE, str(exc))
        except ValueError as exc:
            return _error_frame(frame.method, wire.ERR_INVALID_ARGUMENT, str(exc))
        except Exception as exc:  # noqa: BLE001 - counterpart error frame
            log.exception("internal error serving method %d", frame.method)
            return _error_frame(frame.method, wire.ERR_INTERNAL, repr(exc))
        return wire.Frame(wire.KIND_RESPONSE, frame.method, payload)

    def _dispatch(self, method: int, payload: bytes) -> bytes:
        dm = self.dm
        if method == wire.METHOD_PREDICT:
            algo_id, user, profile = wire.decode_predict_request(payload)
            return wire.encode_prediction(dm.predict(algo_id, user, profile))
        if method == wire.METHOD_RECOMMEND:
            algo_id, user, n, opposite = wire.decode_recommend_request(payload)
            if n < 1 or n > wire.RECOMMEND_MAX_N:
                raise ProtocolError(
                    wire.ERR_LIMIT_EXCEEDED,
                    f"n must be between 1 and {wire.RECOMMEND_MAX_N}, got {n}",
                )
            rec = dm.recommend(algo_id, user, n, opposite_sex_only=opposite)
            return wire.encode_recommendations(rec.for_user, rec.entries)
        if method == wire.METHOD_INSERT:
            user, profile, value = wire.decode_insert_request(payload)
            previous, seq = dm.insert(user, profile, value)
            return wire.encode_insert_response(previous, seq)
        if method == wire.METHOD_PREDICT_INSERT:
            algo_id, user, profile, value = wire.decode_predict_insert_request(payload)
            prediction, previous, seq = dm.predict_insert(algo_id, user, profile, value)
            return wire.encode_predict_insert_response(prediction, previous, seq)
        if method == wire.METHOD_STATS:
            PayloadReaderEmpty(payload)
            return wire.encode_stats(dm.stats())
        if method == wire.METHOD_ALGORITHMS:
            PayloadReaderEmpty(payload)
            roster = [
                (algo_id, dm.algorithms[algo_id].display_name)
                for algo_id in sorted(dm.algorithms)
            ]
            return wire.encode_algorithms(roster)
        raise ProtocolError(wire.ERR_UNKNOWN_METHOD, f"unhandled method {method}")


def PayloadReaderEmpty(payload: bytes) -> None:
    if payload:
        raise ProtocolError(wire.ERR_MALFORMED, "expected an empty payload")


def _error_frame(method: int, code: int, message: str) -> wire.Frame:
    return wire.Frame(wire.KIND_ERROR, method, wire.encode_error(code, message))
