"""Independent reference implementations used to check trapkit's numerics.

Everything here is deliberately written from first principles with different
algorithms and arithmetic (Fractions, grid rasterization, exhaustive search)
than the library code under test. Slow is fine; wrong is not.
"""

from __future__ import annotations

import itertools
import math
import socket
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Sequence, Tuple

Box = Tuple[float, float, float, float]  # (x_min, y_min, width, height), relative


# --------------------------------------------------------------------------
# geometry


def grid_iou(a: Box, b: Box, cells: int = 1000) -> Fraction:
    """IoU by rasterizing both boxes on a cells x cells grid.

    A cell counts as covered when its center lies inside the (closed) box.
    All arithmetic is exact: box floats are lifted to Fractions, so the
    result is a true rational, independent of float rounding in the library.
    """

    def axis_cells(lo: float, size: float) -> Tuple[int, int]:
        # indices i with lo <= (i + 1/2)/cells <= lo + size, clamped to grid
        lo_f = Fraction(lo)
        hi_f = lo_f + Fraction(size)
        first = math.ceil(lo_f * cells - Fraction(1, 2))
        last = math.floor(hi_f * cells - Fraction(1, 2))
        return max(first, 0), min(last, cells - 1)

    def overlap(r1: Tuple[int, int], r2: Tuple[int, int]) -> int:
        lo = max(r1[0], r2[0])
        hi = min(r1[1], r2[1])
        return max(0, hi - lo + 1)

    def count(r: Tuple[int, int]) -> int:
        return max(0, r[1] - r[0] + 1)

    ax, ay = axis_cells(a[0], a[2]), axis_cells(a[1], a[3])
    bx, by = axis_cells(b[0], b[2]), axis_cells(b[1], b[3])
    area_a = count(ax) * count(ay)
    area_b = count(bx) * count(by)
    inter = overlap(ax, bx) * overlap(ay, by)
    union = area_a + area_b - inter
    if union == 0:
        return Fraction(0)
    return Fraction(inter, union)


def exact_iou(a: Box, b: Box) -> Fraction:
    """Analytic IoU over the exact rationals of the input floats."""
    ax0, ay0 = Fraction(a[0]), Fraction(a[1])
    ax1, ay1 = ax0 + Fraction(a[2]), ay0 + Fraction(a[3])
    bx0, by0 = Fraction(b[0]), Fraction(b[1])
    bx1, by1 = bx0 + Fraction(b[2]), by0 + Fraction(b[3])
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union == 0:
        return Fraction(0)
    return inter / union


# --------------------------------------------------------------------------
# matching

# A prediction is (box, category, confidence); a ground truth is (box, category).


def _greedy_order(preds: Sequence[Tuple[Box, str, float]]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i][2], i))


def exhaustive_match(
    preds: Sequence[Tuple[Box, str, float]],
    gts: Sequence[Tuple[Box, str]],
    iou_threshold: float = 0.5,
) -> dict:
    """Reference matcher: search over *all* injective pred->gt assignments.

    The winning assignment maximizes, in greedy confidence order, the
    interleaved vector (iou_1, -gt_1, iou_2, -gt_2, ...): highest IoU first,
    then lowest ground-truth index, one prediction at a time. That is the
    declarative statement of the greedy protocol, evaluated by brute force.

    Returns {"tp", "fp", "fn", "flags"} where flags[i] says whether the
    i-th prediction *in greedy order* matched.
    """
    order = _greedy_order(preds)
    thr = Fraction(iou_threshold)
    # candidate gts per prediction (same category, IoU >= threshold)
    candidates: list[list[Tuple[int, Fraction]]] = []
    for pi in order:
        box, cat, _conf = preds[pi]
        row = []
        for gi, (gbox, gcat) in enumerate(gts):
            if gcat != cat:
                continue
            v = exact_iou(box, gbox)
            if v >= thr:
                row.append((gi, v))
        candidates.append(row)

    none_key = (Fraction(-1), 0)
    best_vec: Optional[tuple] = None
    best_assign: Optional[tuple] = None
    options = [row + [None] for row in candidates]
    for assign in itertools.product(*options):
        used = [gi for gi in assign if gi is not None]
        gids = [gi for gi, _ in used]
        if len(set(gids)) != len(gids):
            continue
        vec = tuple(
            none_key if choice is None else (choice[1], -choice[0])
            for choice in assign
        )
        if best_vec is None or vec > best_vec:
            best_vec = vec
            best_assign = assign
    assert best_assign is not None  # the all-None assignment always valid

    flags = [choice is not None for choice in best_assign]
    tp = sum(flags)
    return {"tp": tp, "fp": len(preds) - tp, "fn": len(gts) - tp, "flags": flags}


def reference_pr(tp: int, fp: int, fn: int) -> Tuple[float, float]:
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


def reference_ap(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP from ranked TP/FP flags.

    Same pinned arithmetic spec as the library (left-to-right float
    accumulation of delta-recall x precision-envelope) but computed with an
    O(n^2) explicit suffix max rather than a running maximum.
    """
    if n_gt == 0:
        return 0.0
    if not flags:
        return 0.0
    n = len(flags)
    tps = list(itertools.accumulate(1 if f else 0 for f in flags))
    precisions = [tps[i] / (i + 1) for i in range(n)]
    recalls = [tps[i] / n_gt for i in range(n)]
    ap = 0.0
    prev_recall = 0.0
    for i in range(n):
        if not flags[i]:
            continue
        envelope = max(precisions[j] for j in range(i, n))
        ap += (recalls[i] - prev_recall) * envelope
        prev_recall = recalls[i]
    return ap


def fraction_ap(flags: Sequence[bool], n_gt: int) -> Fraction:
    """Exact-rational AP; independent of any float accumulation order."""
    if n_gt == 0 or not flags:
        return Fraction(0)
    n = len(flags)
    tps = list(itertools.accumulate(1 if f else 0 for f in flags))
    precisions = [Fraction(tps[i], i + 1) for i in range(n)]
    recalls = [Fraction(tps[i], n_gt) for i in range(n)]
    ap = Fraction(0)
    prev = Fraction(0)
    for i in range(n):
        if not flags[i]:
            continue
        ap += (recalls[i] - prev) * max(precisions[i:])
        prev = recalls[i]
    return ap


# --------------------------------------------------------------------------
# probability


def binomial_tail(n: int, k: int, p: Fraction) -> Fraction:
    """P(X <= k) for X ~ Binomial(n, p), exact."""
    q = 1 - p
    return sum(
        Fraction(math.comb(n, i)) * p**i * q ** (n - i) for i in range(k + 1)
    )


def nearest_centroid(rgb: Tuple[float, float, float], palette: dict) -> str:
    """Label whose palette color is closest (euclidean) to the given mean RGB."""
    def dist(color):
        return math.dist(rgb, color)

    best = min(sorted(palette), key=lambda label: dist(palette[label]))
    return best


def softmax_scores(
    rgb: Tuple[float, float, float],
    palette: dict,
    temperature: float = 20.0,
    uncertain_distance: float = 60.0,
) -> dict:
    """Reference for the synthetic classifier's score rule."""
    labels = list(palette)
    dists = [math.dist(rgb, palette[l]) for l in labels]
    if min(dists) > uncertain_distance:
        return {l: 1.0 / len(labels) for l in labels}
    logits = [-d / temperature for d in dists]
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    total = sum(exps)
    return {l: e / total for l, e in zip(labels, exps)}


# --------------------------------------------------------------------------
# HTTP test server with Range support and fault injection


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # keep test output clean
        pass

    def do_HEAD(self):
        server: RangeServer = self.server.owner  # type: ignore[attr-defined]
        payload = server.files.get(self.path)
        if payload is None:
            self.send_error(404)
            return
        with server.lock:
            server.requests.append(("HEAD", self.path, None))
        self.send_response(200)
        if server.support_ranges:
            self.send_header("Accept-Ranges", "bytes")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()

    def do_GET(self):
        server: RangeServer = self.server.owner  # type: ignore[attr-defined]
        payload = server.files.get(self.path)
        if payload is None:
            self.send_error(404)
            return
        start = 0
        end = len(payload) - 1
        status = 200
        range_header = self.headers.get("Range")
        if server.support_ranges and range_header and range_header.startswith("bytes="):
            spec = range_header[len("bytes="):]
            lo, _, hi = spec.partition("-")
            start = int(lo) if lo else 0
            if hi:
                end = min(int(hi), end)
            status = 206
        body = payload[start : end + 1]

        cut = None
        with server.lock:
            server.requests.append(("GET", self.path, range_header))
            if server.fail_after is not None and server.fails_left > 0:
                if len(body) > server.fail_after:
                    cut = server.fail_after
                    server.fails_left -= 1

        self.send_response(status)
        if server.support_ranges:
            self.send_header("Accept-Ranges", "bytes")
        if status == 206:
            self.send_header(
                "Content-Range", f"bytes {start}-{end}/{len(payload)}"
            )
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if cut is not None:
            # advertise the full length but deliver a truncated body, then
            # drop the connection: simulates a mid-transfer network failure.
            # shutdown(), not close(): rfile/wfile hold makefile refs, so a
            # plain close() would defer the FIN until the keep-alive loop
            # gives up and the client would stall until its read timeout.
            self.wfile.write(body[:cut])
            self.wfile.flush()
            self.close_connection = True
            self.connection.shutdown(socket.SHUT_RDWR)
        else:
            self.wfile.write(body)


class RangeServer:
    """Local HTTP server for download tests: Range requests, injectable cuts."""

    def __init__(
        self,
        files: dict,
        fail_after: Optional[int] = None,
        fails: int = 1,
        support_ranges: bool = True,
    ):
        self.files = {k if k.startswith("/") else "/" + k: v for k, v in files.items()}
        self.fail_after = fail_after
        self.fails_left = fails if fail_after is not None else 0
        self.support_ranges = support_ranges
        self.requests: list[Tuple[str, str, Optional[str]]] = []
        self.lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def __enter__(self) -> "RangeServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def url(self, name: str) -> str:
        host, port = self._httpd.server_address[:2]
        path = name if name.startswith("/") else "/" + name
        return f"http://{host}:{port}{path}"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
