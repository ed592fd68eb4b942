"""Non-intrusive event tracing.

Tracer blocks sit at fixed attachment points (the RAB request/response and
config ports, the system interconnect, and cluster sync lines).  Each block
samples a signal tuple, applies a user predicate, and appends a fixed-layout
24-byte record to its private buffer.  Capture never changes any modeled
latency.

When any buffer fills, the drain protocol runs: the PMCA clock domain is
gated, a host-side routine copies ALL buffers out to the trace store in
tracer-id order, clears them, appends a drain marker, and ungates.  Because
tracer timestamps come from the PMCA domain clock, the whole episode is
invisible in PMCA time.

Record layout (little-endian, 24 bytes)::

    u64 timestamp   PMCA-domain cycle
    u16 tracer_id
    u8  kind        see KIND_*
    u8  flags       see FLAG_* / outcome nibble
    u32 master_id   (cluster << 16) | pe, or 0x100+channel for DMA engines
    u64 payload     address or entry descriptor

File header (32 bytes): magic ``HTRC``, u16 version, u16 reserved,
u32 platform hash, u64 record count, f64 clock ratio, 4 pad bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

KIND_READ_REQ = 0
KIND_READ_RESP = 1
KIND_WRITE_REQ = 2
KIND_WRITE_RESP = 3
KIND_CONFIG_WRITE = 4
KIND_MISS_ENQ = 5
KIND_SLEEP = 6
KIND_WAKE = 7
KIND_DRAIN_MARKER = 8

KIND_NAMES = {
    KIND_READ_REQ: "read_req",
    KIND_READ_RESP: "read_resp",
    KIND_WRITE_REQ: "write_req",
    KIND_WRITE_RESP: "write_resp",
    KIND_CONFIG_WRITE: "config_write",
    KIND_MISS_ENQ: "miss_enq",
    KIND_SLEEP: "sleep",
    KIND_WAKE: "wake",
    KIND_DRAIN_MARKER: "drain_marker",
}

FLAG_PTW = 0x01      # record belongs to a page-table walk
FLAG_BARRIER = 0x02  # sync record is a barrier release
FLAG_DMA = 0x04      # issued by a DMA engine, not a PE
FLAG_BYPASS = 0x08   # address window bypassed translation

# Translation outcome, stored in the high nibble of flags on responses.
OUTCOME_SHIFT = 4
OUTCOME_L1 = 1
OUTCOME_L2 = 2
OUTCOME_MISS = 3
OUTCOME_DROPPED = 4


def outcome_of(flags: int) -> int:
    return (flags >> OUTCOME_SHIFT) & 0xF


ATTACH_POINTS = (
    "rab_read_req", "rab_read_resp", "rab_write_req", "rab_write_resp",
    "rab_config", "bus", "cluster_sync",
)

RECORD = struct.Struct("<QHBBIQ")
HEADER = struct.Struct("<4sHHIQd4x")
MAGIC = b"HTRC"
VERSION = 1

assert RECORD.size == 24 and HEADER.size == 32


@dataclass(frozen=True)
class TraceRecord:
    timestamp: int
    tracer_id: int
    kind: int
    flags: int
    master_id: int
    payload: int

    def pack(self) -> bytes:
        return RECORD.pack(self.timestamp, self.tracer_id, self.kind,
                           self.flags, self.master_id, self.payload)


class _TracerBlock:
    __slots__ = ("tracer_id", "point", "predicate", "depth", "buffer")

    def __init__(self, tracer_id: int, point: str,
                 predicate: Callable[[TraceRecord], bool] | None, depth: int):
        self.tracer_id = tracer_id
        self.point = point
        self.predicate = predicate
        self.depth = depth
        self.buffer: list[TraceRecord] = []


class TraceStore:
    """Host-side store the drain protocol copies records into.

    `records` is ordered as drained; PMCA-domain records keep their
    domain-local timestamps, drain markers carry host/global time.
    """

    def __init__(self, platform_hash: int, clock_ratio: float):
        self.platform_hash = platform_hash
        self.clock_ratio = clock_ratio
        self.records: list[TraceRecord] = []

    def dump(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, 0, self.platform_hash,
                                 len(self.records), self.clock_ratio))
            for rec in self.records:
                fh.write(rec.pack())


class TraceFabric:
    """All tracer blocks of one simulation plus the drain protocol."""

    # Host cycles to service a drain interrupt: fixed entry cost plus one
    # cycle per record copied out.
    DRAIN_BASE_COST = 64
    DRAIN_PER_RECORD = 1

    def __init__(self, sim, store: TraceStore, pmca_domain: str = "pmca",
                 host_domain: str = "host"):
        self.sim = sim
        self.store = store
        self.pmca_domain = pmca_domain
        self.host_domain = host_domain
        self.blocks: list[_TracerBlock] = []
        self._by_point: dict[str, list[_TracerBlock]] = {p: [] for p in ATTACH_POINTS}
        self.drains = 0
        self._drain_scheduled = False

    # -- configuration ------------------------------------------------

    def attach(self, point: str, predicate: Callable[[TraceRecord], bool] | None = None,
               depth: int = 4096) -> int:
        if point not in self._by_point:
            raise ValueError(f"unknown attachment point {point!r}")
        if depth < 1:
            raise ValueError("buffer depth must be >= 1")
        block = _TracerBlock(len(self.blocks), point, predicate, depth)
        self.blocks.append(block)
        self._by_point[point].append(block)
        return block.tracer_id

    def attach_default(self, depth: int = 4096) -> None:
        """One unconditional tracer at every attachment point."""
        for point in ATTACH_POINTS:
            self.attach(point, None, depth)

    # -- capture --------------------------------------------------------

    def emit(self, point: str, kind: int, flags: int, master_id: int,
             payload: int) -> None:
        """Record an event at `point`, stamped with current PMCA-local time."""
        blocks = self._by_point[point]
        if not blocks:
            return
        ts = self.sim.domains[self.pmca_domain].local_now(self.sim.now)
        full = False
        for block in blocks:
            rec = TraceRecord(ts, block.tracer_id, kind, flags & 0xFF,
                              master_id & 0xFFFF_FFFF, payload & 0xFFFF_FFFF_FFFF_FFFF)
            if block.predicate is not None and not block.predicate(rec):
                continue
            block.buffer.append(rec)
            if len(block.buffer) >= block.depth:
                full = True
        if full and not self._drain_scheduled:
            self._drain_scheduled = True
            # Gate immediately (same cycle the buffer filled) so no further
            # PMCA activity can overflow a buffer; the host interrupt
            # routine then copies everything out and re-enables the clock.
            self.sim.gate(self.pmca_domain)
            cost = self.DRAIN_BASE_COST + self.DRAIN_PER_RECORD * self._pending()
            self.sim.schedule(self.host_domain, cost, self._drain)

    def _pending(self) -> int:
        return sum(len(b.buffer) for b in self.blocks)

    def _drain(self) -> None:
        self._flush_buffers()
        self.store.records.append(TraceRecord(
            self.sim.now, 0xFFFF, KIND_DRAIN_MARKER, 0, 0, self.drains))
        self.drains += 1
        self._drain_scheduled = False
        self.sim.ungate(self.pmca_domain)

    def _flush_buffers(self) -> None:
        for block in self.blocks:          # tracer-id order
            self.store.records.extend(block.buffer)
            block.buffer.clear()

    def finalize(self) -> None:
        """Copy out whatever is still buffered, without gating (run ended)."""
        self._flush_buffers()


def parse_trace(path: str) -> tuple[dict, list[TraceRecord]]:
    """Read a trace file; returns (header dict, records in file order)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise ValueError("truncated trace header")
    magic, version, _, phash, count, ratio = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported trace version {version}")
    body = raw[HEADER.size:]
    if len(body) != count * RECORD.size:
        raise ValueError(f"truncated trace body: {count} records declared, "
                         f"{len(body)} bytes present")
    records = [TraceRecord(*RECORD.unpack_from(body, i * RECORD.size))
               for i in range(count)]
    header = {"version": version, "platform_hash": phash,
              "record_count": count, "clock_ratio": ratio}
    return header, records
