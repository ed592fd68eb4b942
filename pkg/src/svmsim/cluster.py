"""Cluster execution: PEs interpret timed op streams; DMA engines move bulk
data through the system interconnect; barriers synchronize.

PEs are not ISA simulators.  A kernel is an ordered list of ops per PE —
compute delays, loads/stores through the RAB, SPM accesses, DMA commands,
barriers — and the interpreter charges each op's latency against the PE's
timeline.  Data effects are real (the DRAM and SPMs are byte arrays), so
benchmark outputs can be checked against plain references.

The system interconnect is modeled as a fluid link: pending transfers of the
active clusters share the aggregate bus bandwidth equally (byte-granular
round-robin in the limit), computed with exact fractions so completion
times are deterministic.  A NoC gives every cluster its own fixed-rate link.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from . import tracing
from .faults import SimulationFault
from .memory import PAGE_SIZE


# --------------------------------------------------------------------------
# Kernel ops

@dataclass
class Compute:
    cycles: int
    fn: Callable[[], None] | None = None   # runs when the op completes


@dataclass
class LoadVA:
    va: int
    nbytes: int = 4
    fn: Callable[[bytes], None] | None = None   # receives loaded bytes


@dataclass
class StoreVA:
    va: int
    nbytes: int = 4
    fn: Callable[[], bytes] | None = None       # produces the payload


@dataclass
class LoadSpm:
    bank: int


@dataclass
class StoreSpm:
    bank: int


@dataclass
class DmaGet:
    """DRAM -> SPM.  chunk/stride describe 2D transfers: `chunk` bytes every
    `stride` bytes of external address space (0 means flat)."""
    addr: int
    spm_off: int
    nbytes: int
    tag: int
    chunk: int = 0
    stride: int = 0


@dataclass
class DmaPut:
    """SPM -> DRAM, same addressing as DmaGet."""
    addr: int
    spm_off: int
    nbytes: int
    tag: int
    chunk: int = 0
    stride: int = 0


@dataclass
class WaitDma:
    tag: int


@dataclass
class Barrier:
    scope: str = "cluster"     # "cluster" | "global"


@dataclass
class End:
    pass


KernelProgram = list  # list of the op dataclasses above, ending with End


def master_id(cluster: int, pe: int) -> int:
    return (cluster << 16) | pe


def dma_master_id(cluster: int, channel: int) -> int:
    return (cluster << 16) | (0x100 + channel)


# --------------------------------------------------------------------------
# System interconnect

class _Transfer:
    __slots__ = ("nbytes", "remaining", "cluster", "on_finish", "enq_local")

    def __init__(self, nbytes: int, cluster: int, on_finish, enq_local: int):
        self.nbytes = nbytes
        self.remaining = Fraction(nbytes)
        self.cluster = cluster
        self.on_finish = on_finish   # called with the exact finish Fraction
        self.enq_local = enq_local


class Interconnect:
    """Fluid-shared bus or per-cluster NoC links between clusters and DRAM.

    Bus: the head transfer of every cluster with pending work receives an
    equal share of `bus_bandwidth`; shares are recomputed whenever the set
    of active clusters changes.  NoC: each cluster's head transfer gets
    `noc_link_bandwidth` independent of the others.

    All bookkeeping is in PMCA-local time with Fraction precision, so the
    model is exact and deterministic; the engine is woken at the integer
    cycle that covers the next internal finish.
    """

    def __init__(self, kind: str, bandwidth: int, sim, domain: str = "pmca"):
        self.kind = kind
        self.bandwidth = bandwidth
        self.sim = sim
        self.domain = domain
        self.queues: dict[int, list[_Transfer]] = {}
        self.last_update = Fraction(0)
        self._wake = None

    # rate of the head transfer of `cluster`, given current membership
    def _rate(self, active: int) -> Fraction:
        if self.kind == "noc":
            return Fraction(self.bandwidth)
        return Fraction(self.bandwidth, active)

    def _local_now(self) -> int:
        return self.sim.domains[self.domain].local_now(self.sim.now)

    def enqueue(self, cluster: int, nbytes: int, on_finish) -> None:
        """Add a transfer to `cluster`'s FIFO at the current local time.
        on_finish(finish_fraction) fires when the last byte moves."""
        now = self._local_now()
        self._advance(Fraction(now))
        q = self.queues.setdefault(cluster, [])
        q.append(_Transfer(nbytes, cluster, on_finish, now))
        self._arm()

    def _active(self) -> list[int]:
        return sorted(c for c, q in self.queues.items() if q)

    def _advance(self, to: Fraction) -> None:
        """Evolve the fluid state up to time `to`, firing internal finishes."""
        while True:
            active = self._active()
            if not active:
                self.last_update = to
                return
            rate = self._rate(len(active))
            # Earliest head finish under current membership.
            tmin = None
            for c in active:
                head = self.queues[c][0]
                t = self.last_update + head.remaining / rate
                if tmin is None or t < tmin:
                    tmin = t
            if tmin > to:
                dt = to - self.last_update
                for c in active:
                    self.queues[c][0].remaining -= rate * dt
                self.last_update = to
                return
            dt = tmin - self.last_update
            finished = []
            for c in active:
                head = self.queues[c][0]
                head.remaining -= rate * dt
                if head.remaining == 0:
                    finished.append(self.queues[c].pop(0))
            self.last_update = tmin
            for tr in finished:           # cluster order: deterministic
                tr.on_finish(tmin)

    def _arm(self) -> None:
        """(Re)schedule the engine wakeup covering the next internal finish."""
        if self._wake is not None:
            self._wake.cancel()
            self._wake = None
        active = self._active()
        if not active:
            return
        rate = self._rate(len(active))
        tmin = min(self.last_update + self.queues[c][0].remaining / rate
                   for c in active)
        wake_at = -(-tmin // 1)   # ceil to the covering integer cycle
        now = self._local_now()
        self._wake = self.sim.schedule(self.domain, max(0, int(wake_at) - now),
                                       self._on_wake)

    def _on_wake(self) -> None:
        self._wake = None
        self._advance(Fraction(self._local_now()))
        self._arm()


# --------------------------------------------------------------------------
# DMA engine (one per cluster, multi-channel command queue)

class DmaEngine:
    """Translates VA transfers page-by-page through the RAB, then streams
    the bytes over the interconnect; completion is bus finish plus the DRAM
    base latency.  A transfer that misses the RAB stalls until the miss
    handler wakes it, exactly like a PE."""

    def __init__(self, machine, cluster: int):
        self.machine = machine
        self.cluster = cluster
        self.free = deque(range(machine.calib.dma_channels))
        self.pending: deque = deque()         # commands awaiting a channel
        self.done_tags: set[int] = set()
        self.waiters: dict[int, list] = {}    # tag -> [pe, ...]
        self.in_flight = 0

    def start(self, op, t: int) -> None:
        spm_size = len(self.machine.spms[self.cluster].data)
        if op.spm_off < 0 or op.spm_off + op.nbytes > spm_size:
            raise SimulationFault(
                f"DMA transfer overflows cluster {self.cluster} SPM: "
                f"offset {op.spm_off} + {op.nbytes} bytes exceeds {spm_size}")
        if op.nbytes == 0:
            self._finish(op, t)
            return
        self.in_flight += 1
        if self.free:
            self._begin(op, self.free.popleft(), t)
        else:
            self.pending.append(op)

    def _begin(self, op, channel: int, t: int) -> None:
        master = dma_master_id(self.cluster, channel)
        self._translate(op, master, self._pieces(op), 0, t)

    def _pieces(self, op) -> list[tuple[int, int, int]]:
        """(ext_addr, spm_off, nbytes) chunks of the (possibly 2D) transfer."""
        if not op.chunk:
            return [(op.addr, op.spm_off, op.nbytes)]
        pieces = []
        addr, spm_off, left = op.addr, op.spm_off, op.nbytes
        while left > 0:
            n = min(op.chunk, left)
            pieces.append((addr, spm_off, n))
            addr += op.stride
            spm_off += n
            left -= n
        return pieces

    def _pages(self, pieces) -> list[int]:
        pages = []
        seen = set()
        for addr, _, n in pieces:
            for page in range(addr >> 12, (addr + n - 1 >> 12) + 1):
                if page not in seen:
                    seen.add(page)
                    pages.append(page)
        return pages

    def _translate(self, op, master: int, pieces, page_i: int, t: int) -> None:
        """Translate the transfer's pages serially, one cycle per hit."""
        m = self.machine
        pages = self._pages(pieces)
        is_write = isinstance(op, DmaPut)
        tcur = t
        i = page_i
        while i < len(pages):
            va = pages[i] << 12
            out = m.rab.translate(va, master, is_write, tcur, flags=tracing.FLAG_DMA)
            if out.kind in ("l1_hit", "l2_hit"):
                m.page_map[pages[i]] = out.pa >> 12
                tcur = out.ready
                i += 1
                continue
            if out.kind == "permission_fault":
                raise SimulationFault(
                    f"DMA permission fault at va 0x{va:08x} (master 0x{master:x})")
            if out.kind == "miss_enqueued":
                m.emit_sync(tracing.KIND_SLEEP, master, va, at=out.ready,
                            flags=tracing.FLAG_DMA)
                m.vmm.kick(out.ready)
                m.vmm.on_wake(master,
                              lambda tw, i=i: self._translate(op, master, pieces, i, tw))
                return
            # miss_dropped: retry this page after any wake broadcast.
            m.retry_after_wake(
                lambda tw, i=i: self._translate(op, master, pieces, i, tw))
            return
        self._stream(op, master, pieces, tcur)

    def _stream(self, op, master: int, pieces, t: int) -> None:
        m = self.machine
        is_put = isinstance(op, DmaPut)
        # Data moves now (modeled stores are not reordered); timing follows.
        for addr, spm_off, n in pieces:
            spm = m.spms[self.cluster]
            for pa, piece_off, k in self._pa(addr, n):
                s = spm_off + piece_off
                if is_put:
                    m.dram.write(pa, bytes(spm.data[s:s + k]))
                else:
                    spm.data[s:s + k] = m.dram.read(pa, k)
        kind = tracing.KIND_WRITE_REQ if is_put else tracing.KIND_READ_REQ
        payload = (op.nbytes << 32) | (op.addr & 0xFFFF_FFFF)
        m.emit_bus(kind, master, payload, flags=tracing.FLAG_DMA, at=t)
        m.interconnect.enqueue(
            self.cluster, op.nbytes,
            lambda finish: self._bus_done(op, master, finish))

    def _pa(self, addr: int, n: int) -> list[tuple[int, int, int]]:
        """Split [addr, addr+n) into per-page (pa, piece offset, len) runs."""
        m = self.machine
        runs = []
        off = 0
        while n > 0:
            page = (addr + off) >> 12
            ppn = m.page_map.get(page, page)
            in_page = min(n, PAGE_SIZE - ((addr + off) & 0xFFF))
            runs.append(((ppn << 12) | ((addr + off) & 0xFFF), off, in_page))
            off += in_page
            n -= in_page
        return runs

    def _bus_done(self, op, master: int, finish: Fraction) -> None:
        m = self.machine
        done_local = int(-(-finish // 1)) + m.calib.dram_base_latency
        now_local = m.local_now()
        m.sim.schedule("pmca", done_local - now_local,
                       lambda: self._complete(op, master))

    def _complete(self, op, master: int) -> None:
        m = self.machine
        kind = tracing.KIND_WRITE_RESP if isinstance(op, DmaPut) else tracing.KIND_READ_RESP
        payload = (op.nbytes << 32) | (op.addr & 0xFFFF_FFFF)
        m.emit_bus(kind, master, payload, flags=tracing.FLAG_DMA)
        self.in_flight -= 1
        self._finish(op, m.local_now())
        channel = (master & 0xFFFF) - 0x100
        if self.pending:
            self._begin(self.pending.popleft(), channel, m.local_now())
        else:
            self.free.append(channel)

    def _finish(self, op, t: int) -> None:
        self.done_tags.add(op.tag)
        for pe in self.waiters.pop(op.tag, []):
            self.machine.resume_pe(pe, t)

    def wait(self, pe, tag: int) -> bool:
        """True if already done; else parks the PE until the tag finishes."""
        if tag in self.done_tags:
            return True
        self.waiters.setdefault(tag, []).append(pe)
        return False


# --------------------------------------------------------------------------
# PE interpreter

RUNNING, PARKED, SLEEPING, DONE = "running", "parked", "sleeping", "done"


class PeState:
    __slots__ = ("cluster", "pe", "program", "pc", "status", "busy_until",
                 "finish", "is_handler", "epochs")

    def __init__(self, cluster: int, pe: int, program: KernelProgram | None):
        self.cluster = cluster
        self.pe = pe
        self.program = program
        self.pc = 0
        self.status = RUNNING
        self.busy_until = 0
        self.finish = 0
        self.is_handler = False
        self.epochs: dict = {}   # barrier scope -> rendezvous instance count

    @property
    def master(self) -> int:
        return master_id(self.cluster, self.pe)


class BarrierState:
    """One rendezvous instance; participants release at max(arrival)+1."""

    def __init__(self, scope_key, participants: int):
        self.scope_key = scope_key
        self.expected = participants
        self.arrived: list[tuple[int, PeState]] = []

    def arrive(self, pe: PeState, t: int) -> bool:
        self.arrived.append((t, pe))
        return len(self.arrived) == self.expected
