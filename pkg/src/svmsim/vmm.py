"""PMCA-side virtual memory management: the miss-handling routine.

One PE per PMCA doubles as the miss handler (by convention the last PE of
cluster 0).  When the RAB enqueues a miss, the handler — as soon as it is
not busy with a kernel op — dequeues it, walks the host page table (charged
as sequential DRAM reads, visible in the trace as PTW-flagged accesses),
selects a victim TLB entry, writes the new entry through the RAB config
port, and wakes the sleeping master once the entry is visible.

The handler PE shares one timeline with its kernel program: handling and
program ops serialize.  A handler parked at a barrier or a DMA wait is
considered available (the wait consumes no cycles).
"""

from __future__ import annotations

import random

from . import tracing
from .faults import SimulationFault
from .memory import pt_walk, vpn
from .rab import TlbEntry


def select_victim(view: list, policy: str, rr_counter: int,
                  rng: random.Random | None = None) -> int:
    """Pick a slot index from `view` (newest entry per slot, None = free).

    Invalid slots win, lowest index first; otherwise: fifo evicts the
    oldest install, round_robin cycles, random draws from the seeded rng.
    """
    for i, entry in enumerate(view):
        if entry is None or not entry.valid:
            return i
    if policy == "fifo":
        return min(range(len(view)), key=lambda i: view[i].install_seq)
    if policy == "round_robin":
        return rr_counter % len(view)
    if policy == "random":
        return rng.randrange(len(view))
    raise ValueError(f"unknown victim policy {policy!r}")


class Vmm:
    def __init__(self, machine, policy: str = "fifo", seed: int = 0):
        self.machine = machine
        self.policy = policy
        self.rng = random.Random(seed)
        self.rr_counter = 0
        self._active = False
        self._wake_callbacks: dict[int, object] = {}
        self.handled = 0

    # -- handler-PE plumbing ------------------------------------------------

    @property
    def handler(self):
        return self.machine.handler_pe

    def on_wake(self, master: int, callback) -> None:
        """Register a resume callback for a sleeping master (DMA engines)."""
        self._wake_callbacks[master] = callback

    def kick(self, at: int) -> None:
        """A miss was enqueued at local cycle `at`; start dispatching."""
        if self._active:
            return
        self._active = True
        m = self.machine
        m.sim.schedule("pmca", max(0, at - m.local_now()), self._dispatch)

    # -- the handling routine -------------------------------------------------

    def _dispatch(self) -> None:
        m = self.machine
        now = m.local_now()
        if self.handler.busy_until > now:
            # Handler is mid-op; try again when its timeline frees up.
            m.sim.schedule("pmca", self.handler.busy_until - now, self._dispatch)
            return
        miss = m.rab.pop_miss()
        if miss is None:
            self._active = False
            return
        done = self._handle(miss, now)
        m.sim.schedule("pmca", done - now, self._dispatch)

    def _handle(self, miss, t: int) -> int:
        """Walk, install, wake.  Returns the cycle the handler is free."""
        m = self.machine
        entry, walk_done = self._walk(miss.va, t)
        if entry is None:
            raise SimulationFault(
                f"unmapped page at va 0x{miss.va:08x} "
                f"(master 0x{miss.master_id:x}): page fault")
        ppn, can_read, can_write = entry
        visible = self._install(miss.va, ppn, can_read, can_write, walk_done)
        self.handler.busy_until = max(self.handler.busy_until, visible)
        wake_at = visible + m.calib.wake_latency
        m.sim.schedule("pmca", wake_at - m.local_now(),
                       lambda: self._wake(miss, wake_at))
        self.handled += 1
        return visible

    def _walk(self, va: int, t: int):
        """Page-table walk on the handler's DRAM port, traced per level."""
        m = self.machine

        def on_read(level: int, start: int, done: int) -> None:
            payload = (4 << 32) | (0x8000_0000 + level * 4)
            m.emit_at(start, "rab_read_req", tracing.KIND_READ_REQ,
                      tracing.FLAG_PTW, self.handler.master, payload)
            m.emit_at(done, "rab_read_resp", tracing.KIND_READ_RESP,
                      tracing.FLAG_PTW, self.handler.master, payload)

        return pt_walk(m.page_table, m.dram, self.handler.cluster, va, t, on_read)

    def _install(self, va: int, ppn: int, can_read: bool, can_write: bool,
                 t: int) -> int:
        """Choose a victim L1 slot and write the entry; returns visibility."""
        m = self.machine
        page = vpn(va)
        slot = m.rab.l1_slot_of(page)
        if slot is None:
            slot = select_victim(m.rab.l1_view(), self.policy,
                                 self.rr_counter, self.rng)
            self.rr_counter += 1
        entry = TlbEntry(vpn=page, ppn=ppn, read=can_read, write=can_write)
        return m.rab.config_write("l1", (slot,), entry, t)

    def _wake(self, miss, t: int) -> None:
        m = self.machine
        m.emit_sync(tracing.KIND_WAKE, miss.master_id, miss.va)
        callback = self._wake_callbacks.pop(miss.master_id, None)
        if callback is not None:
            callback(t)
        else:
            m.wake_pe(miss.master_id, t)
        m.broadcast_retry(t)

    # -- explicit mapping (pre-mapping API) -----------------------------------

    def map_page(self, va: int, t: int) -> int:
        """Walk and install without sleep/wake; returns entry visibility."""
        entry, walk_done = self._walk(va, t)
        if entry is None:
            raise SimulationFault(f"map_page: unmapped va 0x{va:08x}")
        ppn, can_read, can_write = entry
        return self._install(va, ppn, can_read, can_write, walk_done)
