"""
UGSD Transports
In-process and byte-stream channels between the edge and the cloud verifier
"""

from __future__ import annotations

import logging
import select
import socket
from typing import Optional

from cloud import CloudVerifierService
from errors import TransportFailure

logger = logging.getLogger(__name__)

EDGE_TO_CLOUD = "edge->cloud"
CLOUD_TO_EDGE = "cloud->edge"


class Transport:
    """Frame channel with a wire log of everything that crossed it"""

    def __init__(self):
        self.wire: list[tuple[str, bytes]] = []

    @property
    def sent_frames(self) -> list[bytes]:
        return [frame for direction, frame in self.wire if direction == EDGE_TO_CLOUD]

    def send(self, frame: bytes):
        """One-way frame; the cloud only answers if something went wrong"""
        self.wire.append((EDGE_TO_CLOUD, frame))
        self._send(frame)

    def request(self, frame: bytes) -> bytes:
        self.wire.append((EDGE_TO_CLOUD, frame))
        reply = self._request(frame)
        self.wire.append((CLOUD_TO_EDGE, reply))
        return reply

    def close(self):
        pass

    def _send(self, frame: bytes):
        raise NotImplementedError

    def _request(self, frame: bytes) -> bytes:
        raise NotImplementedError


class InProcessTransport(Transport):
    def __init__(self, service: CloudVerifierService):
        super().__init__()
        self.service = service
        self._pending: Optional[bytes] = None

    def _send(self, frame):
        reply = self.service.handle_frame(frame)
        if reply.frame is not None and self._pending is None:
            # surfaced on the next request, like an error line waiting on a socket
            self._pending = reply.frame

    def _request(self, frame):
        if self._pending is not None:
            pending, self._pending = self._pending, None
            return pending
        reply = self.service.handle_frame(frame)
        if reply.frame is None:
            raise TransportFailure("cloud sent no reply")
        return reply.frame


class StreamTransport(Transport):
    """Newline-delimited frames over a TCP connection, opened on first use"""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        super().__init__()
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._reader = None

    def _connect(self):
        if self._sock is not None:
            return
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            self._reader = self._sock.makefile("rb")
        except OSError as e:
            raise TransportFailure(f"cannot reach cloud at {self.host}:{self.port}: {e}") from e

    def _send(self, frame):
        self._connect()
        try:
            self._sock.sendall(frame)
        except OSError as e:
            raise TransportFailure(f"send failed: {e}") from e

    def _pending_line(self) -> Optional[bytes]:
        """An error line the cloud already sent, e.g. after rejecting hello"""
        if self._sock is None:
            return None
        try:
            readable, _, _ = select.select([self._sock], [], [], 0)
            line = self._reader.readline() if readable else b""
        except OSError as e:
            raise TransportFailure(f"receive failed: {e}") from e
        return line or None

    def _request(self, frame):
        pending = self._pending_line()
        if pending is not None:
            return pending
        self._send(frame)
        try:
            line = self._reader.readline()
        except OSError as e:
            raise TransportFailure(f"receive failed: {e}") from e
        if not line:
            raise TransportFailure("cloud closed the connection")
        return line

    def close(self):
        if self._sock is None:
            return
        try:
            self._reader.close()
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        finally:
            self._sock.close()
            self._sock = None
            self._reader = None
