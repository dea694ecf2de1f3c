"""Minimal HTTP front end for a federation of regional backends.

POST /submit/<region>          upload body, responds with ACK or REJECT bytes
GET  /list/<region>?since=N    JSON batch index for slots after N
GET  /batch/<region>/<slot>    raw batch bytes
"""

from __future__ import annotations

import logging
import signal
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .backend import ACK, Federation, UnknownRegion

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class _Handler(BaseHTTPRequestHandler):
    federation: Federation
    clock = staticmethod(time.time)

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, code: int, body: bytes, ctype="application/octet-stream"):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _route(self):
        parts = [p for p in urlsplit(self.path).path.split("/") if p]
        return parts

    def do_POST(self):
        parts = self._route()
        if len(parts) != 2 or parts[0] != "submit":
            return self._send(404, b"not found", "text/plain")
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0 or length > MAX_BODY:
            return self._send(413, b"bad length", "text/plain")
        data = self.rfile.read(length)
        try:
            resp = self.federation.submit(parts[1], data, self.clock())
        except UnknownRegion:
            return self._send(404, b"unknown region", "text/plain")
        self._send(200 if resp == ACK else 400, resp)

    def do_GET(self):
        parts = self._route()
        try:
            if len(parts) == 2 and parts[0] == "list":
                query = parse_qs(urlsplit(self.path).query)
                since = int(query.get("since", ["-1"])[0])
                body = self.federation.backend(parts[1]).batch_index(since)
                return self._send(200, body, "application/json")
            if len(parts) == 3 and parts[0] == "batch":
                return self._send(200, self.federation.backend(parts[1]).get_batch(int(parts[2])))
        except (UnknownRegion, KeyError):
            return self._send(404, b"not found", "text/plain")
        except ValueError:
            return self._send(400, b"bad request", "text/plain")
        self._send(404, b"not found", "text/plain")


class BackendServer:
    """HTTP server plus a ticker thread that publishes ended slots."""

    def __init__(self, federation: Federation, host="127.0.0.1", port=0, tick_seconds=1.0, clock=None):
        self.federation = federation
        self.clock = clock or time.time
        handler = type("Handler", (_Handler,), {"federation": federation, "clock": staticmethod(self.clock)})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.tick_seconds = tick_seconds
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def tick(self):
        now = self.clock()
        self.federation.deliver_pending(now)
        for b in self.federation.publish_all(now):
            log.info("published %s slot %d (%d bytes)", b.region, b.slot_id, len(b.body))

    def _tick(self):
        while not self._stop.wait(self.tick_seconds):
            try:
                self.tick()
            except Exception:  # keep serving even if one publication fails
                log.exception("slot publication failed")

    def start(self) -> "BackendServer":
        for target in (self.httpd.serve_forever, self._tick):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_until_interrupted(self) -> None:
        """Serve until SIGINT or SIGTERM; queued uploads stay in the log for the next start."""
        if threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGTERM, lambda *_: self._stop.set())
        self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        except KeyboardInterrupt:
            log.info("shutting down")
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)
        # publish any slot that ended while shutting down
        try:
            self.tick()
        except Exception:
            log.exception("final publication failed")
