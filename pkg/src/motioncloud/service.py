"""HTTP query service over a loaded model and index (stdlib server).

Endpoints, all answering ``application/json``:

    GET  /v1/health
    GET  /v1/videos
    GET  /v1/videos/{id}/annotations
    POST /v1/query        tar or zip of frame images, raw or multipart

The model and index are loaded once and never modified, so request
threads share them without locking.
"""
import io
import json
import logging
import signal
import tarfile
import threading
import time
import zipfile
from email.parser import BytesParser
from email.policy import HTTP
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlsplit

from . import indexer
from .pipeline import PipelineError
from .templates import TemplateError, sequence_from_images

log = logging.getLogger(__name__)

MAX_BODY = 256 * 1024 * 1024


class RequestError(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


def read_archive(data):
    """``(name, bytes)`` members of a tar or zip archive."""
    if not data:
        raise RequestError(400, "empty upload")
    buf = io.BytesIO(data)
    try:
        if zipfile.is_zipfile(buf):
            with zipfile.ZipFile(buf) as zf:
                return [(i.filename, zf.read(i)) for i in zf.infolist() if not i.is_dir()]
        buf.seek(0)
        with tarfile.open(fileobj=buf, mode="r:*") as tf:
            return [(m.name, tf.extractfile(m).read()) for m in tf.getmembers() if m.isfile()]
    except (tarfile.TarError, zipfile.BadZipFile, OSError, EOFError) as exc:
        raise RequestError(400, f"malformed archive: {exc}") from exc


def multipart_payload(content_type, body):
    """First file (or first part) of a multipart/form-data body."""
    head = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
    msg = BytesParser(policy=HTTP).parsebytes(head + body)
    if not msg.is_multipart():
        raise RequestError(400, "malformed multipart body")
    parts = list(msg.iter_parts())
    if not parts:
        raise RequestError(400, "multipart body has no parts")
    chosen = next((p for p in parts if p.get_filename()), parts[0])
    return chosen.get_payload(decode=True) or b""


class QueryService:
    """Request routing, independent of the socket layer."""

    def __init__(self, model, records):
        self.model = model
        self.records = list(records)
        self.by_video = {}
        for r in self.records:
            self.by_video.setdefault(r.video_id, []).append(r)

    def handle(self, method, target, headers=None, body=b""):
        """Return ``(status, payload dict)``."""
        headers = headers or {}
        url = urlsplit(target)
        path = url.path.rstrip("/") or "/"
        params = parse_qs(url.query)
        try:
            if path == "/v1/health" and method == "GET":
                return 200, {"status": "ok", "videos": len(self.by_video)}
            if path == "/v1/videos" and method == "GET":
                return 200, {"videos": [
                    {"video_id": v, "windows": len(rs), "frames": max(r.end_frame for r in rs)}
                    for v, rs in sorted(self.by_video.items())
                ]}
            if path.startswith("/v1/videos/") and path.endswith("/annotations") and method == "GET":
                vid = unquote(path[len("/v1/videos/"):-len("/annotations")])
                if vid not in self.by_video:
                    raise RequestError(404, f"unknown video {vid!r}")
                return 200, {"video_id": vid,
                             "records": [indexer.record_to_dict(r) for r in self.by_video[vid]]}
            if path == "/v1/query" and method == "POST":
                return 200, self.query(params, headers, body)
            if path in ("/v1/health", "/v1/videos", "/v1/query") or path.startswith("/v1/videos/"):
                raise RequestError(405, f"method {method} not allowed on {path}")
            raise RequestError(404, f"no such endpoint: {path}")
        except RequestError as exc:
            return exc.status, {"error": str(exc)}

    def query(self, params, headers, body):
        t0 = time.perf_counter()
        try:
            top = int(params.get("top", ["10"])[0])
            rho = params.get("rho", [None])[0]
            rho = None if rho is None else float(rho)
        except ValueError as exc:
            raise RequestError(400, f"bad query parameter: {exc}") from exc
        if top < 1 or (rho is not None and rho < 0):
            raise RequestError(400, "top must be >= 1 and rho >= 0")
        ctype = {k.lower(): v for k, v in headers.items()}.get("content-type", "")
        if ctype.lower().startswith("multipart/"):
            body = multipart_payload(ctype, body)
        members = read_archive(body)
        try:
            clip = sequence_from_images(members, name="query")
        except TemplateError as exc:
            raise RequestError(400, f"invalid clip: {exc}") from exc
        if not self.records:
            raise RequestError(409, "index is empty")
        try:
            res = indexer.query_similarity(clip, self.model, self.records, top, rho)
        except PipelineError as exc:
            raise RequestError(422, str(exc)) from exc
        return {
            "results": [
                {"video_id": h.video_id, "window": [h.start_frame, h.end_frame],
                 "similarity_pct": round(h.similarity, 6), "predicted_class": h.predicted_class}
                for h in res.hits
            ],
            "null_query": res.null_query,
            "timing_ms": round(1000.0 * (time.perf_counter() - t0), 3),
        }


class _Handler(BaseHTTPRequestHandler):
    service = None
    protocol_version = "HTTP/1.1"

    def _reply(self, status, payload):
        data = json.dumps(payload, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method):
        body = b""
        length = self.headers.get("Content-Length")
        if length:
            try:
                n = int(length)
            except ValueError:
                return self._reply(400, {"error": "bad Content-Length"})
            if n < 0 or n > MAX_BODY:
                return self._reply(413, {"error": "upload too large"})
            body = self.rfile.read(n)
        try:
            status, payload = self.service.handle(method, self.path, dict(self.headers), body)
        except Exception as exc:  # last line of defence: keep the JSON contract
            log.exception("request failed")
            status, payload = 500, {"error": f"internal error: {exc}"}
        self._reply(status, payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_DELETE(self):
        self._dispatch("DELETE")

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)


def make_server(model, records, port=8080, host="127.0.0.1"):
    """Bound server (port 0 picks a free port); call ``serve_forever`` to run."""
    handler = type("Handler", (_Handler,), {"service": QueryService(model, records)})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = False  # let in-flight requests finish on shutdown
    return server


def serve(model, records, port=8080, host="127.0.0.1"):
    """Run until SIGTERM/SIGINT, then drain in-flight requests."""
    server = make_server(model, records, port, host)

    def stop(signum, frame):
        log.info("signal %d: shutting down", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()
    return server
