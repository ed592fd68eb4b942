"""One simulated SoC instance: host + PMCA, wired and runnable.

`Machine` owns the event engine, the DRAM and per-cluster SPMs, the RAB,
the miss handler, the system interconnect, the trace fabric, and the PE
interpreter.  `execute()` runs one kernel (a program per PE) to completion
and returns the PMCA-local finish cycle.
"""

from __future__ import annotations

from . import tracing
from .cluster import (RUNNING, PARKED, SLEEPING, DONE, Barrier, BarrierState,
                      Compute, DmaEngine, DmaGet, DmaPut, End, Interconnect,
                      LoadSpm, LoadVA, PeState, StoreSpm, StoreVA, WaitDma,
                      master_id)
from .config import CalibrationConfig, PlatformConfig, platform_hash32
from .engine import Simulator
from .faults import SimulationFault
from .memory import (COPY_REGION_BASE, COPY_REGION_SIZE, HOST_VA_BASE,
                     PAGE_SIZE, Dram, PageTable, SpmBanks, vpn)
from .rab import Rab
from .vmm import Vmm


class Machine:
    def __init__(self, platform: PlatformConfig | None = None,
                 calib: CalibrationConfig | None = None,
                 seed: int = 0, trace_depth: int = 65536,
                 victim_policy: str = "fifo"):
        self.platform = platform or PlatformConfig()
        self.calib = calib or CalibrationConfig()
        self.seed = seed
        self.sim = Simulator()
        self.store = tracing.TraceStore(platform_hash32(self.platform),
                                        self.calib.clock_ratio)
        self.fabric = tracing.TraceFabric(self.sim, self.store)
        self.fabric.attach_default(depth=trace_depth)
        self.dram = Dram(self.calib, self.platform.n_clusters)
        self.page_table = PageTable(self.calib.ptw_levels)
        self.spms = [SpmBanks(self.platform) for _ in range(self.platform.n_clusters)]
        self.rab = Rab(self.platform, self.calib, self.sim, self.fabric)
        self.rab.add_bypass_window(COPY_REGION_BASE,
                                   COPY_REGION_BASE + COPY_REGION_SIZE)
        self.interconnect_kind = self.platform.interconnect
        bw = (self.calib.bus_bandwidth if self.interconnect_kind == "bus"
              else self.calib.noc_link_bandwidth)
        self.interconnect = Interconnect(self.interconnect_kind, bw, self.sim)
        self.dmas = [DmaEngine(self, c) for c in range(self.platform.n_clusters)]
        self.vmm = Vmm(self, policy=victim_policy, seed=seed)
        self.pes: dict[int, object] = {}
        self.handler_pe = PeState(0, self.platform.pes_per_cluster - 1, None)
        self.handler_pe.is_handler = True
        self.handler_pe.status = DONE
        self._barriers: dict = {}
        self._barrier_seq = 0
        self._retry_callbacks: list = []
        self.page_map: dict[int, int] = {}   # vpn -> ppn cache for DMA data moves
        self._copy_next = COPY_REGION_BASE
        self._va_next = HOST_VA_BASE

    # -- address-space management ---------------------------------------------

    def alloc_copy(self, nbytes: int) -> int:
        """Reserve space in the physically contiguous copy-out region."""
        base = self._copy_next
        end = COPY_REGION_BASE + COPY_REGION_SIZE
        aligned = (base + 63) & ~63
        if aligned + nbytes > end:
            raise SimulationFault("copy region exhausted")
        self._copy_next = aligned + nbytes
        return aligned

    def alloc_va(self, nbytes: int, align: int = 64) -> int:
        """Carve a fresh host virtual range (pages not yet populated)."""
        base = (self._va_next + align - 1) & ~(align - 1)
        self._va_next = base + nbytes
        return base

    def populate_va(self, va: int, nbytes: int, read: bool = True,
                    write: bool = True) -> None:
        """Back [va, va+nbytes) with fresh frames in the host page table."""
        first = vpn(va)
        last = vpn(va + nbytes - 1)
        missing = [p for p in range(first, last + 1)
                   if self.page_table.lookup(p) is None]
        if missing:
            frame = self.page_table.alloc_frames(len(missing))
            for i, p in enumerate(missing):
                self.page_table.install(p, frame + i, read, write)

    def _va_to_pa(self, va: int) -> int:
        if COPY_REGION_BASE <= va < COPY_REGION_BASE + COPY_REGION_SIZE:
            return va
        entry = self.page_table.lookup(vpn(va))
        if entry is None:
            raise SimulationFault(f"host access to unmapped va 0x{va:08x}")
        return (entry[0] << 12) | (va & 0xFFF)

    def write_va(self, va: int, data: bytes) -> None:
        """Host-side (zero-sim-time) write through the page table."""
        off = 0
        while off < len(data):
            n = min(len(data) - off, PAGE_SIZE - ((va + off) & 0xFFF))
            self.dram.write(self._va_to_pa(va + off), data[off:off + n])
            off += n

    def read_va(self, va: int, nbytes: int) -> bytes:
        out = bytearray()
        off = 0
        while off < nbytes:
            n = min(nbytes - off, PAGE_SIZE - ((va + off) & 0xFFF))
            out += self.dram.read(self._va_to_pa(va + off), n)
            off += n
        return bytes(out)

    # -- small helpers ------------------------------------------------------

    def local_now(self) -> int:
        return self.sim.domains["pmca"].local_now(self.sim.now)

    def emit_bus(self, kind: int, master: int, payload: int,
                 flags: int = 0, at: int | None = None) -> None:
        self.emit_at(at if at is not None else self.local_now(),
                     "bus", kind, flags, master, payload)

    def emit_sync(self, kind: int, master: int, payload: int,
                  flags: int = 0, at: int | None = None) -> None:
        self.emit_at(at if at is not None else self.local_now(),
                     "cluster_sync", kind, flags, master, payload)

    def emit_at(self, at: int, point: str, kind: int, flags: int,
                master: int, payload: int) -> None:
        now = self.local_now()
        if at <= now:
            self.fabric.emit(point, kind, flags, master, payload)
        else:
            self.sim.schedule("pmca", at - now,
                              lambda: self.fabric.emit(point, kind, flags,
                                                       master, payload))

    # -- kernel execution ----------------------------------------------------

    def execute(self, programs: dict[tuple[int, int], list]) -> int:
        """Run one kernel; `programs` maps (cluster, pe) -> op list.

        PEs without a program idle.  Returns the PMCA-local cycle when the
        last PE reached End.  The miss handler is (0, pes_per_cluster-1).
        """
        self.pes.clear()
        self._barriers.clear()
        handler_coords = (0, self.platform.pes_per_cluster - 1)
        self.handler_pe = None
        start = self.local_now()
        for (c, p), program in sorted(programs.items()):
            if not (0 <= c < self.platform.n_clusters
                    and 0 <= p < self.platform.pes_per_cluster):
                raise SimulationFault(f"program for nonexistent PE ({c}, {p})")
            if not program or not isinstance(program[-1], End):
                raise SimulationFault(f"program for PE ({c}, {p}) lacks End")
            pe = PeState(c, p, program)
            pe.busy_until = start
            pe.finish = start
            self.pes[master_id(c, p)] = pe
            if (c, p) == handler_coords:
                pe.is_handler = True
                self.handler_pe = pe
        if self.handler_pe is None:
            # Idle handler: available for miss handling, not a participant.
            pe = PeState(*handler_coords, None)
            pe.is_handler = True
            pe.status = DONE
            pe.busy_until = start
            self.pes[master_id(*handler_coords)] = pe
            self.handler_pe = pe
        for pe in self.pes.values():
            if pe.status is not DONE:
                self.sim.schedule("pmca", 0, lambda pe=pe: self._step(pe))
        self.sim.run_until_idle()
        not_done = [pe for pe in self.pes.values() if pe.status is not DONE]
        if not_done:
            worst = not_done[0]
            raise SimulationFault(
                f"deadlock: PE ({worst.cluster}, {worst.pe}) stuck "
                f"{worst.status} at pc {worst.pc} "
                f"({len(not_done)} PEs never finished)")
        finish = max(pe.finish for pe in self.pes.values())
        self.fabric.finalize()
        return finish - start

    # The interpreter: one step event per op issue; ops schedule their own
    # completion and the next step.

    def _step(self, pe) -> None:
        if pe.status is not RUNNING:
            return
        now = self.local_now()
        t0 = max(now, pe.busy_until)
        op = pe.program[pe.pc]

        if isinstance(op, End):
            pe.status = DONE
            pe.finish = t0
            return

        if isinstance(op, Compute):
            done = t0 + op.cycles
            pe.busy_until = done
            self._after(done - now, lambda: self._complete_compute(pe, op))
            return

        if isinstance(op, (LoadVA, StoreVA)):
            self._mem_access(pe, op, t0)
            return

        if isinstance(op, (LoadSpm, StoreSpm)):
            done = self.spms[pe.cluster].access(op.bank, t0)
            pe.busy_until = done
            self._advance(pe, done - now)
            return

        if isinstance(op, (DmaGet, DmaPut)):
            issue_done = t0 + 1
            pe.busy_until = issue_done
            self._after(issue_done - now,
                        lambda: self.dmas[pe.cluster].start(op, issue_done))
            self._advance(pe, issue_done - now)
            return

        if isinstance(op, WaitDma):
            if self.dmas[pe.cluster].wait(pe, op.tag):
                self._advance(pe, t0 - now)
            else:
                pe.status = PARKED
                pe.busy_until = t0
            return

        if isinstance(op, Barrier):
            self._arrive_barrier(pe, op.scope, t0)
            return

        raise SimulationFault(f"PE ({pe.cluster}, {pe.pe}): malformed op {op!r}")

    def _after(self, delay: int, action) -> None:
        self.sim.schedule("pmca", max(0, delay), action)

    def _advance(self, pe, delay: int) -> None:
        """Move to the next op; its step event fires after `delay`."""
        pe.pc += 1
        self._after(delay, lambda: self._step(pe))

    def _complete_compute(self, pe, op) -> None:
        if op.fn is not None:
            op.fn()
        pe.pc += 1
        self._step(pe)

    # -- loads/stores through the RAB -----------------------------------------

    def _mem_access(self, pe, op, t0: int) -> None:
        is_write = isinstance(op, StoreVA)
        out = self.rab.translate(op.va, pe.master, is_write, t0)

        if out.kind == "permission_fault":
            raise SimulationFault(
                f"permission fault: PE ({pe.cluster}, {pe.pe}) "
                f"{'write' if is_write else 'read'} at va 0x{op.va:08x}")

        if out.kind in ("l1_hit", "l2_hit"):
            payload = (op.nbytes << 32) | (out.pa & 0xFFFF_FFFF)
            data = op.fn() if (is_write and op.fn is not None) else None
            if is_write and data is None:
                data = bytes(op.nbytes)
            start, done = self.dram.access(pe.cluster, out.pa, op.nbytes,
                                           is_write, out.ready, data)
            req = tracing.KIND_WRITE_REQ if is_write else tracing.KIND_READ_REQ
            resp = tracing.KIND_WRITE_RESP if is_write else tracing.KIND_READ_RESP
            self.emit_bus(req, pe.master, payload, at=start)
            self.emit_bus(resp, pe.master, payload, at=done)
            pe.busy_until = done
            if not is_write and op.fn is not None:
                loaded = self.dram.read(out.pa, op.nbytes)
                self._after(done - self.local_now(),
                            lambda: op.fn(loaded))
            self._advance(pe, done - self.local_now())
            return

        if out.kind == "miss_enqueued":
            if pe.is_handler:
                raise SimulationFault(
                    f"miss handler PE ({pe.cluster}, {pe.pe}) missed at "
                    f"va 0x{op.va:08x}: would deadlock")
            pe.status = SLEEPING
            pe.busy_until = t0
            self.emit_sync(tracing.KIND_SLEEP, pe.master, op.va, at=out.ready)
            self.vmm.kick(out.ready)
            return

        # miss_dropped: retry after the next wake broadcast.
        pe.status = SLEEPING
        pe.busy_until = t0
        self.retry_after_wake(lambda tw: self.wake_pe(pe.master, tw))

    # -- sleep/wake plumbing ---------------------------------------------------

    def wake_pe(self, master: int, t: int) -> None:
        pe = self.pes[master]
        if pe.status is not SLEEPING:
            return
        pe.status = RUNNING
        pe.busy_until = max(pe.busy_until, t)
        # Retry the same op (pc unchanged).
        self._after(max(0, t - self.local_now()), lambda: self._step(pe))

    def resume_pe(self, pe, t: int) -> None:
        """A parked PE's wait condition came true: continue past the op."""
        if pe.status is not PARKED:
            return
        pe.status = RUNNING
        pe.busy_until = max(pe.busy_until, t)
        pe.pc += 1
        self._after(max(0, t - self.local_now()), lambda: self._step(pe))

    def retry_after_wake(self, callback) -> None:
        self._retry_callbacks.append(callback)

    def broadcast_retry(self, t: int) -> None:
        callbacks, self._retry_callbacks = self._retry_callbacks, []
        for cb in callbacks:
            cb(t)

    # -- barriers ---------------------------------------------------------------

    def _barrier_key(self, pe, scope: str):
        if scope == "cluster":
            return ("cluster", pe.cluster)
        if scope == "global":
            return ("global",)
        raise SimulationFault(f"unknown barrier scope {scope!r}")

    def _participants(self, key) -> int:
        if key[0] == "cluster":
            return sum(1 for pe in self.pes.values()
                       if pe.cluster == key[1] and pe.program is not None)
        return sum(1 for pe in self.pes.values() if pe.program is not None)

    def _arrive_barrier(self, pe, scope: str, t0: int) -> None:
        base = self._barrier_key(pe, scope)
        epoch = pe.epochs.get(base, 0)
        pe.epochs[base] = epoch + 1
        key = (base, epoch)
        state = self._barriers.get(key)
        if state is None:
            state = BarrierState(key, self._participants(base))
            self._barriers[key] = state
        pe.status = PARKED
        pe.busy_until = t0
        self.emit_sync(tracing.KIND_SLEEP, pe.master, 0,
                       flags=tracing.FLAG_BARRIER, at=t0)
        if state.arrive(pe, t0):
            del self._barriers[key]
            release = max(arr for arr, _ in state.arrived) + 1
            self._barrier_seq += 1
            seq = self._barrier_seq
            for _, part in sorted(state.arrived, key=lambda ap: ap[1].master):
                self.emit_sync(tracing.KIND_WAKE, part.master, seq,
                               flags=tracing.FLAG_BARRIER, at=release)
                self.resume_pe(part, release)
