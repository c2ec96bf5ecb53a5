"""In-process metrics registry and a text-exposition HTTP endpoint."""
from __future__ import annotations

import bisect
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import BindFailure

SLOT_BUCKETS = (0.0005, 0.001, 0.002, 0.004, 0.008, 0.016)
CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"

_GAUGES = (
    ("tinytwin_ue_snr_db", "Channel-defined SNR of the last slot in dB.", "snr_db"),
    ("tinytwin_ue_mcs", "MCS index selected for the last slot.", "mcs"),
    ("tinytwin_ue_buffer_bits", "Bits queued for the UE.", "buffer_bits"),
)
_COUNTERS = (
    ("tinytwin_ue_bits_delivered_total", "Bits delivered in decoded transport blocks.", "bits_delivered"),
    ("tinytwin_ue_drops_total", "Transport blocks that failed to decode.", "drops"),
)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


class MetricsRegistry:
    """Thread-safe store for per-UE link metrics and the slot compute histogram."""

    def __init__(self, buckets=SLOT_BUCKETS):
        self._lock = threading.Lock()
        self.buckets = tuple(sorted(buckets))
        self._bucket_counts = [0] * (len(self.buckets) + 1)
        self._sum = 0.0
        self._count = 0
        self._ues: dict[int, dict[str, float]] = {}

    def register_ue(self, ue_id: int) -> None:
        with self._lock:
            self._ues.setdefault(int(ue_id), {
                "snr_db": float("nan"), "mcs": 0, "buffer_bits": 0,
                "bits_delivered": 0, "drops": 0})

    def set_link(self, state) -> None:
        with self._lock:
            ue = self._ues.setdefault(int(state.ue_id), {})
            ue.update(snr_db=state.snr_db, mcs=state.mcs, buffer_bits=state.buffer_bits,
                      bits_delivered=state.bits_delivered, drops=state.drops)

    def observe_slot(self, seconds: float) -> None:
        with self._lock:
            self._bucket_counts[bisect.bisect_left(self.buckets, seconds)] += 1
            self._sum += seconds
            self._count += 1

    @property
    def slot_count(self) -> int:
        with self._lock:
            return self._count

    def snapshot(self) -> dict:
        with self._lock:
            cumulative, acc = [], 0
            for c in self._bucket_counts:
                acc += c
                cumulative.append(acc)
            return {
                "ues": {k: dict(v) for k, v in self._ues.items()},
                "buckets": list(zip(self.buckets + (math.inf,), cumulative)),
                "sum": self._sum,
                "count": self._count,
            }

    def render(self) -> str:
        snap = self.snapshot()
        lines = []
        ues = sorted(snap["ues"].items())
        for name, help_, key in _GAUGES:
            lines += [f"# HELP {name} {help_}", f"# TYPE {name} gauge"]
            lines += [f'{name}{{ue="{ue}"}} {_fmt(vals.get(key, 0))}' for ue, vals in ues]
        for name, help_, key in _COUNTERS:
            lines += [f"# HELP {name} {help_}", f"# TYPE {name} counter"]
            lines += [f'{name}{{ue="{ue}"}} {_fmt(vals.get(key, 0))}' for ue, vals in ues]
        name = "tinytwin_slot_compute_seconds"
        lines += [f"# HELP {name} Wall-clock compute time per slot.", f"# TYPE {name} histogram"]
        for le, count in snap["buckets"]:
            lines.append(f'{name}_bucket{{le="{_fmt(le) if math.isinf(le) else repr(le)}"}} {count}')
        lines.append(f"{name}_sum {_fmt(snap['sum'])}")
        lines.append(f"{name}_count {snap['count']}")
        return "\n".join(lines) + "\n"


class MetricsServer:
    def __init__(self, httpd: ThreadingHTTPServer, thread: threading.Thread):
        self._httpd = httpd
        self._thread = thread

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/metrics"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_addr(addr: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return (host or default_host), int(port)


def serve_metrics(registry: MetricsRegistry, endpoint: str | tuple = ("127.0.0.1", 0)) -> MetricsServer:
    """Serve ``GET /metrics`` from a daemon thread. ``endpoint`` is ``host:port`` or a tuple."""
    if isinstance(endpoint, str):
        endpoint = parse_addr(endpoint)

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self):
            if self.path.split("?", 1)[0] != "/metrics":
                self.send_error(404)
                return
            body = registry.render().encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", CONTENT_TYPE)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    try:
        httpd = ThreadingHTTPServer(tuple(endpoint), Handler)
    except OSError as exc:
        raise BindFailure(f"cannot bind metrics endpoint {endpoint}: {exc}") from exc
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, name="metrics-http", daemon=True)
    thread.start()
    return MetricsServer(httpd, thread)
