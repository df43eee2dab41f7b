"""Benchmark harness: sweep payload sizes and signing modes over a throttled
link, report throughput, first-byte latency and peak tracked memory.

Peak memory is sampled with tracemalloc around each run (deterministic,
portable) rather than OS-level RSS; the absolute numbers therefore reflect
Python-level allocations, which is exactly where the blocking path's
reconstituted infoset lives.  The digest-rate calibration times the blocking
engine's whole serial preparation pass (reconstitute, canonicalize, digest,
sign), since that is the term the overlap model adds to the blocking
transfer time.
"""

from __future__ import annotations

import random
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import IO

from . import xop
from .config import resolve_chunk_size
from .errors import StreamSignError
from .sources import prng_source
from .transport import ConnectError, Endpoint, SendResult, ThrottleConfig, send
from .wssec import KeyMaterial, sign_blocking, sign_streaming
from .wssec.constants import SOAP_BODY, SOAP_ENVELOPE, SOAP_HEADER
from .xmlcore import ElementPath, XmlName, XmlNode, element
from .mime import format_package_content_type, generate_boundary

TRANSFER_NS = "urn:streamsign:transfer"

MODE_UNSIGNED = "unsigned"
MODE_BLOCKING = "blocking"
MODE_STREAMING_LAX = "streaming_lax"
MODE_STREAMING_STRICT = "streaming_strict"

ALL_MODES = (MODE_UNSIGNED, MODE_BLOCKING, MODE_STREAMING_LAX, MODE_STREAMING_STRICT)

CSV_HEADER = "size,mode,median_s,throughput_Bps,first_byte_s,peak_mem_B,reps"


class BenchError(StreamSignError):
    pass


class ServerUnavailable(BenchError):
    pass


class VerificationFailedDuringBench(BenchError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[int, ...] = (1 << 20, 4 << 20, 16 << 20, 64 << 20, 256 << 20)
    modes: tuple[str, ...] = (MODE_UNSIGNED, MODE_BLOCKING, MODE_STREAMING_STRICT)
    repetitions: int = 3
    throttle: ThrottleConfig | None = ThrottleConfig(rate=12_500_000, bucket=1 << 20)
    warmup: int = 1
    seed: int = 20070917
    chunk_size: int | None = None

    def __post_init__(self) -> None:
        if not self.sizes or list(self.sizes) != sorted(set(self.sizes)):
            raise BenchError("sizes must be non-empty and strictly increasing")
        if self.repetitions < 3:
            raise BenchError("need at least 3 repetitions")
        bad = [m for m in self.modes if m not in ALL_MODES]
        if bad:
            raise BenchError(f"unknown modes: {bad}")


@dataclass
class BenchRow:
    size: int
    mode: str
    median_s: float
    throughput_Bps: float
    first_byte_s: float
    peak_mem_B: int
    reps: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    meta: dict = field(default_factory=dict)

    def row(self, size: int, mode: str) -> BenchRow:
        for r in self.rows:
            if r.size == size and r.mode == mode:
                return r
        raise BenchError(f"no row for size={size} mode={mode}")


class NullSink:
    """Discards writes; used for calibration and memory measurements."""

    def __init__(self) -> None:
        self.total = 0

    def write(self, data: bytes) -> int:
        self.total += len(data)
        return len(data)


def transfer_envelope() -> tuple[XmlNode, ElementPath]:
    """Tiny data-transfer envelope with one binary carrier in the body."""
    payload = element(XmlName("Payload", TRANSFER_NS, "data"))
    envelope = element(
        SOAP_ENVELOPE,
        children=[element(SOAP_HEADER), element(SOAP_BODY, children=[payload])],
    )
    return envelope, (1, 0)


def make_producer(
    mode: str,
    keys: KeyMaterial,
    size: int,
    seed: int,
    boundary: str,
    root_content_id: str,
    chunk: int,
    rng: random.Random,
):
    """Build the client-side body producer for one benchmark run."""
    envelope, path = transfer_envelope()
    binaries = {path: xop.BinaryContent(source=prng_source(seed, size, chunk))}

    if mode == MODE_UNSIGNED:

        def produce(sink: IO[bytes]) -> None:
            package = xop.extract(
                envelope, binaries, boundary=boundary, rng=rng, chunk_size=chunk
            )
            package.root_content_id = root_content_id
            xop.write_package(package, sink, chunk_size=chunk)

    elif mode == MODE_BLOCKING:

        def produce(sink: IO[bytes]) -> None:
            sign_blocking(
                envelope,
                binaries,
                keys,
                sink,
                boundary=boundary,
                root_content_id=root_content_id,
                rng=rng,
                chunk_size=chunk,
            )

    elif mode in (MODE_STREAMING_LAX, MODE_STREAMING_STRICT):

        def produce(sink: IO[bytes]) -> None:
            sign_streaming(
                envelope,
                binaries,
                keys,
                sink,
                strict=mode == MODE_STREAMING_STRICT,
                boundary=boundary,
                root_content_id=root_content_id,
                rng=rng,
                chunk_size=chunk,
            )

    else:
        raise BenchError(f"unknown mode {mode}")

    return produce


def calibrate_digest_rate(
    keys: KeyMaterial,
    size: int = 64 << 20,
    seed: int = 1,
    chunk_size: int | None = None,
) -> float:
    """Bytes/second of the blocking engine's serial preparation pass."""
    chunk = resolve_chunk_size(chunk_size)
    envelope, path = transfer_envelope()
    binaries = {path: xop.BinaryContent(source=prng_source(seed, size, chunk))}
    message = sign_blocking(envelope, binaries, keys, NullSink(), chunk_size=chunk)
    return size / message.timings["prepare_s"]


def _probe(endpoint: Endpoint) -> None:
    import socket

    try:
        socket.create_connection((endpoint.host, endpoint.port), timeout=5).close()
    except OSError as exc:
        raise ServerUnavailable(f"no server at {endpoint.host}:{endpoint.port}: {exc}") from exc


def _check_response(result: SendResult, mode: str) -> None:
    import json

    if result.status != 200:
        raise VerificationFailedDuringBench(
            f"server rejected a {mode} run: {result.body.decode('utf-8', 'replace')}"
        )
    if mode == MODE_UNSIGNED:
        return
    try:
        payload = json.loads(result.body)
    except ValueError as exc:
        raise VerificationFailedDuringBench(f"unreadable server report: {exc}") from exc
    if payload.get("signature_valid") is not True:
        raise VerificationFailedDuringBench(f"server report for {mode} run: {payload}")


def run_benchmark(
    config: BenchConfig,
    keys: KeyMaterial,
    endpoint: Endpoint,
    progress=None,
) -> BenchReport:
    """Run the full sweep; every signed run must verify server-side."""
    chunk = resolve_chunk_size(config.chunk_size)
    _probe(endpoint)
    digest_rate = calibrate_digest_rate(keys, seed=config.seed, chunk_size=chunk)

    rows: list[BenchRow] = []
    for size in config.sizes:
        for mode in config.modes:
            walls: list[float] = []
            first_bytes: list[float] = []
            peaks: list[int] = []
            for i in range(config.warmup + config.repetitions):
                run_seed = config.seed + i
                rng = random.Random(f"{config.seed}/{size}/{mode}/{i}")
                boundary = generate_boundary(rng)
                root_cid = xop.new_content_id(rng)
                producer = make_producer(
                    mode, keys, size, run_seed, boundary, root_cid, chunk, rng
                )
                content_type = format_package_content_type(boundary, root_cid)
                tracemalloc.start()
                tracemalloc.reset_peak()
                try:
                    result = send(
                        endpoint,
                        producer,
                        throttle=config.throttle,
                        content_type=content_type,
                        chunk_size=chunk,
                    )
                finally:
                    peak = tracemalloc.get_traced_memory()[1]
                    tracemalloc.stop()
                _check_response(result, mode)
                if i < config.warmup:
                    continue
                walls.append(result.end_time - result.start_time)
                first_bytes.append(result.first_byte_time - result.start_time)
                peaks.append(peak)
                if progress:
                    progress(size, mode, i - config.warmup, walls[-1])
            median_wall = statistics.median(walls)
            rows.append(
                BenchRow(
                    size=size,
                    mode=mode,
                    median_s=median_wall,
                    throughput_Bps=size / median_wall if median_wall > 0 else float("inf"),
                    first_byte_s=statistics.median(first_bytes),
                    peak_mem_B=max(peaks),
                    reps=config.repetitions,
                )
            )

    rows.sort(key=lambda r: (r.size, r.mode))
    meta = {
        "seed": config.seed,
        "chunk_bytes": chunk,
        "throttle_Bps": config.throttle.rate if config.throttle else None,
        "digest_rate_Bps": digest_rate,
        "repetitions": config.repetitions,
        "warmup": config.warmup,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return BenchReport(rows=rows, meta=meta)


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------


def emit_csv(report: BenchReport, path: str) -> None:
    """Write the report as CSV, one row per (size, mode), sorted."""
    if not report.rows:
        raise BenchError("refusing to write an empty report")
    lines = [f"# {key}={value}" for key, value in sorted(report.meta.items())]
    lines.append(CSV_HEADER)
    for r in sorted(report.rows, key=lambda r: (r.size, r.mode)):
        lines.append(
            f"{r.size},{r.mode},{r.median_s:.6f},{r.throughput_Bps:.1f},"
            f"{r.first_byte_s:.6f},{r.peak_mem_B},{r.reps}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_plot_data(report: BenchReport, path: str) -> None:
    """Whitespace-separated data file, one block per mode (gnuplot-ready)."""
    if not report.rows:
        raise BenchError("refusing to write an empty report")
    blocks = []
    modes = sorted({r.mode for r in report.rows})
    for mode in modes:
        lines = [f"# mode={mode}", "# size_B median_s throughput_Bps first_byte_s peak_mem_B"]
        for r in sorted(report.rows, key=lambda r: r.size):
            if r.mode != mode:
                continue
            lines.append(
                f"{r.size} {r.median_s:.6f} {r.throughput_Bps:.1f} "
                f"{r.first_byte_s:.6f} {r.peak_mem_B}"
            )
        blocks.append("\n".join(lines))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n\n\n".join(blocks) + "\n")


def render_figures(report: BenchReport, csv_path: str) -> list[str]:
    """Render throughput and memory charts next to the CSV; returns paths."""
    if not report.rows:
        raise BenchError("refusing to plot an empty report")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stem = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    modes = sorted({r.mode for r in report.rows})
    written = []

    def series(mode: str, attr: str) -> tuple[list[int], list[float]]:
        rows = sorted((r for r in report.rows if r.mode == mode), key=lambda r: r.size)
        return [r.size for r in rows], [getattr(r, attr) for r in rows]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for mode in modes:
        xs, ys = series(mode, "throughput_Bps")
        ax.plot([x / 2**20 for x in xs], [y / 1e6 for y in ys], marker="o", label=mode)
    if report.meta.get("throttle_Bps"):
        ax.axhline(report.meta["throttle_Bps"] / 1e6, ls="--", lw=0.8, color="gray",
                   label="throttle rate")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("payload size (MiB)")
    ax.set_ylabel("throughput (MB/s)")
    ax.set_title("Transfer throughput by signing mode")
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = f"{stem}_throughput.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for mode in modes:
        xs, ys = series(mode, "peak_mem_B")
        ax.plot([x / 2**20 for x in xs], [y / 2**20 for y in ys], marker="s", label=mode)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("payload size (MiB)")
    ax.set_ylabel("peak tracked memory (MiB)")
    ax.set_title("Peak client memory by signing mode")
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = f"{stem}_memory.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    return written
