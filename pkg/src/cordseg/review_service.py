"""HTTP review layer over stored case reports.

Reviewers can toggle individual regions in or out and move the decision
threshold; the verdict is always recomputed from the current state with
the same strict-greater rule the pipeline uses, never cached. Overrides
live in sidecar session files so the original machine output stays
untouched and auditable.

Endpoints (JSON unless noted):
  GET   /api/cases
  GET   /api/cases/{id}
  GET   /api/cases/{id}/mask    (PGM bytes)
  GET   /api/cases/{id}/image   (PGM bytes)
  GET   /api/cases/{id}/decision
  PATCH /api/cases/{id}/regions/{rid}   {"included": bool}
  PUT   /api/cases/{id}/threshold       {"threshold": int}
  GET   /                        static UI bundle
"""

from __future__ import annotations

import errno
import json
import re
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .postprocess import decide_count

FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>cordseg review</title></head>
<body><h1>cordseg review service</h1>
<p>No UI bundle installed. The JSON API lives under <code>/api/cases</code>.</p>
</body></html>
"""

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


class UnknownCaseError(KeyError):
    pass


class UnknownRegionError(KeyError):
    pass


class ReviewStore:
    """Reports plus mutable review sessions, persisted next to each other."""

    def __init__(self, reports_dir: Path):
        self.reports_dir = Path(reports_dir)
        self._lock = threading.Lock()
        self._case_locks: dict[str, threading.Lock] = {}
        self._reports: dict[str, dict] = {}
        self._sessions: dict[str, dict] = {}
        for path in sorted(self.reports_dir.glob("*.report.json")):
            report = json.loads(path.read_text(encoding="utf-8"))
            self._reports[report["id"]] = report
            session_path = self._session_path(report["id"])
            if session_path.is_file():
                self._sessions[report["id"]] = json.loads(
                    session_path.read_text(encoding="utf-8")
                )

    def _session_path(self, case_id: str) -> Path:
        return self.reports_dir / f"{case_id}.session.json"

    def _case_lock(self, case_id: str) -> threading.Lock:
        with self._lock:
            return self._case_locks.setdefault(case_id, threading.Lock())

    def _report(self, case_id: str) -> dict:
        try:
            return self._reports[case_id]
        except KeyError:
            raise UnknownCaseError(case_id) from None

    def _session(self, case_id: str) -> dict:
        report = self._report(case_id)
        if case_id not in self._sessions:
            self._sessions[case_id] = {
                "threshold": report["threshold"],
                "overrides": {},
                "note": "",
                "revision": 0,
            }
        return self._sessions[case_id]

    def _persist(self, case_id: str) -> None:
        self._session_path(case_id).write_text(
            json.dumps(self._sessions[case_id], indent=2) + "\n", encoding="utf-8"
        )

    def _effective_regions(self, case_id: str) -> list[dict]:
        report = self._report(case_id)
        overrides = self._session(case_id)["overrides"]
        out = []
        for region in report["regions"]:
            included = overrides.get(str(region["id"]), region["included"])
            out.append({**region, "included": included})
        return out

    def decision(self, case_id: str) -> dict:
        session = self._session(case_id)
        count = sum(1 for r in self._effective_regions(case_id) if r["included"])
        decision = decide_count(count, session["threshold"])
        return {
            "count": decision.cord_count,
            "threshold": decision.threshold,
            "verdict": decision.verdict,
            "revision": session["revision"],
        }

    def list_cases(self) -> list[dict]:
        out = []
        for case_id in sorted(self._reports):
            d = self.decision(case_id)
            out.append({"id": case_id, "count": d["count"], "verdict": d["verdict"]})
        return out

    def get_case(self, case_id: str) -> dict:
        report = self._report(case_id)
        session = self._session(case_id)
        return {
            "report": report,
            "session": {
                "threshold": session["threshold"],
                "overrides": dict(session["overrides"]),
                "note": session["note"],
                "revision": session["revision"],
            },
            "regions": self._effective_regions(case_id),
            "decision": self.decision(case_id),
        }

    def set_region_included(self, case_id: str, region_id: int, included: bool) -> dict:
        with self._case_lock(case_id):
            report = self._report(case_id)
            if not any(r["id"] == region_id for r in report["regions"]):
                raise UnknownRegionError(region_id)
            session = self._session(case_id)
            session["overrides"][str(region_id)] = bool(included)
            session["revision"] += 1
            self._persist(case_id)
            return self.decision(case_id)

    def set_threshold(self, case_id: str, threshold: int) -> dict:
        if not isinstance(threshold, int) or isinstance(threshold, bool) or threshold < 0:
            raise ValueError(f"threshold must be an integer >= 0, got {threshold!r}")
        with self._case_lock(case_id):
            session = self._session(case_id)
            session["threshold"] = threshold
            session["revision"] += 1
            self._persist(case_id)
            return self.decision(case_id)

    def file_bytes(self, case_id: str, kind: str) -> bytes:
        report = self._report(case_id)
        if kind == "mask":
            path = self.reports_dir / report["mask"]
        else:
            path = self.reports_dir / f"{case_id}.image.pgm"
        if not path.is_file():
            raise UnknownCaseError(f"{case_id}:{kind}")
        return path.read_bytes()


_ROUTES = [
    ("GET", re.compile(r"^/api/cases$"), "list_cases"),
    ("GET", re.compile(r"^/api/cases/([^/]+)$"), "get_case"),
    ("GET", re.compile(r"^/api/cases/([^/]+)/mask$"), "mask"),
    ("GET", re.compile(r"^/api/cases/([^/]+)/image$"), "image"),
    ("GET", re.compile(r"^/api/cases/([^/]+)/decision$"), "decision"),
    ("PATCH", re.compile(r"^/api/cases/([^/]+)/regions/(\d+)$"), "region"),
    ("PUT", re.compile(r"^/api/cases/([^/]+)/threshold$"), "threshold"),
]


class ReviewHandler(BaseHTTPRequestHandler):
    store: ReviewStore
    ui_dir: Path | None = None

    # quiet by default; tests and the CLI watch stdout
    def log_message(self, fmt: str, *args) -> None:
        pass

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc) -> None:
        self._send(status, json.dumps(doc).encode("utf-8"), "application/json")

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            doc = json.loads(raw) if raw else {}
        except json.JSONDecodeError:
            raise ValueError("request body is not valid JSON")
        if not isinstance(doc, dict):
            raise ValueError("request body must be a JSON object")
        return doc

    def _dispatch(self, method: str) -> None:
        route_path = self.path.split("?", 1)[0]
        for verb, pattern, action in _ROUTES:
            if verb != method:
                continue
            m = pattern.match(route_path)
            if not m:
                continue
            try:
                self._handle(action, *m.groups())
            except (UnknownCaseError, UnknownRegionError) as exc:
                self._send_json(404, {"error": f"not found: {exc.args[0]}"})
            except ValueError as exc:
                self._send_json(400, {"error": str(exc)})
            return
        if method == "GET":
            self._serve_static()
        else:
            self._send_json(404, {"error": "no such endpoint"})

    def _handle(self, action: str, *groups: str) -> None:
        store = self.store
        if action == "list_cases":
            self._send_json(200, store.list_cases())
        elif action == "get_case":
            self._send_json(200, store.get_case(groups[0]))
        elif action == "decision":
            self._send_json(200, store.decision(groups[0]))
        elif action in ("mask", "image"):
            body = store.file_bytes(groups[0], action)
            self._send(200, body, "image/x-portable-graymap")
        elif action == "region":
            doc = self._read_body()
            if "included" not in doc or not isinstance(doc["included"], bool):
                raise ValueError('body must be {"included": true|false}')
            result = store.set_region_included(groups[0], int(groups[1]), doc["included"])
            self._send_json(200, result)
        elif action == "threshold":
            doc = self._read_body()
            if "threshold" not in doc:
                raise ValueError('body must be {"threshold": <int >= 0>}')
            result = store.set_threshold(groups[0], doc["threshold"])
            self._send_json(200, result)

    def _serve_static(self) -> None:
        rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
        if self.ui_dir is not None:
            target = (self.ui_dir / rel).resolve()
            if (
                target.is_file()
                and self.ui_dir.resolve() in target.parents
            ):
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                self._send(200, target.read_bytes(), ctype)
                return
        if rel == "index.html":
            self._send(200, FALLBACK_PAGE, "text/html; charset=utf-8")
        else:
            self._send_json(404, {"error": "no such file"})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_PATCH(self) -> None:
        self._dispatch("PATCH")

    def do_PUT(self) -> None:
        self._dispatch("PUT")


def make_server(
    reports_dir: Path, port: int, ui_dir: Path | None = None, host: str = "127.0.0.1"
) -> ThreadingHTTPServer:
    handler = type(
        "BoundReviewHandler",
        (ReviewHandler,),
        {"store": ReviewStore(reports_dir), "ui_dir": ui_dir},
    )
    return ThreadingHTTPServer((host, port), handler)


def serve(reports_dir: Path, port: int, ui_dir: Path | None = None) -> int:
    """Run until interrupted. Returns a CLI exit code."""
    try:
        server = make_server(reports_dir, port, ui_dir)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            print(f"error: port {port} is already in use", file=sys.stderr)
            return 6
        raise
    bound_port = server.server_address[1]
    case_count = len(server.RequestHandlerClass.store._reports)
    print(f"review service on http://127.0.0.1:{bound_port}/ ({case_count} cases)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
