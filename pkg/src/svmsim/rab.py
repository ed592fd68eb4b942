"""Remapping Address Block: PMCA-side virtual-to-physical translation.

Two TLB levels:

* L1 — fully associative, single-cycle.  Lookups never contend, so an L1
  hit completes in one cycle even while an L2 search is in flight
  (hit-under-miss).
* L2 — set-associative, banked, multi-cycle.  A search scans one set
  ``l2_ways_per_cycle`` ways per cycle (``ceil(assoc / l2_ways_per_cycle)``
  cycles); the single lookup unit serializes concurrent searches.

Requests that miss both levels are enqueued (FIFO, bounded) for the
miss-handling routine; when the queue is full the outcome is
``miss_dropped`` and the requester must retry later.

Configuration writes land on a port with a small latency: an entry written
at t serves translations issued at or after ``t + rab_config_write_latency``.
Entries are versioned internally so an in-flight lookup sees exactly the
entries that were visible at its issue cycle.

Address windows (the physically contiguous copy-out region) bypass
translation entirely: matching addresses translate identity in one cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import tracing
from .config import CalibrationConfig, PlatformConfig
from .memory import vpn


@dataclass
class TlbEntry:
    vpn: int
    ppn: int
    read: bool = True
    write: bool = True
    valid: bool = True
    install_seq: int = 0


@dataclass
class MissRecord:
    va: int
    master_id: int
    is_write: bool
    issue: int   # cycle the miss was enqueued


@dataclass
class TranslationOutcome:
    kind: str          # l1_hit | l2_hit | miss_enqueued | miss_dropped | permission_fault
    ready: int         # cycle the pa is usable / the miss is enqueued
    pa: int | None = None
    bypass: bool = False


class _VersionedSlot:
    """One TLB slot/way whose contents change with config-port latency."""

    __slots__ = ("versions",)

    def __init__(self):
        # (visible_from, entry-or-None), ascending by visible_from.
        self.versions: list[tuple[int, TlbEntry | None]] = [(0, None)]

    def install(self, entry: TlbEntry | None, visible_from: int) -> None:
        i = len(self.versions)
        while i > 0 and self.versions[i - 1][0] > visible_from:
            i -= 1
        self.versions.insert(i, (visible_from, entry))

    def entry_at(self, t: int) -> TlbEntry | None:
        live = None
        for visible_from, entry in self.versions:
            if visible_from <= t:
                live = entry
            else:
                break
        return live

    def newest(self) -> TlbEntry | None:
        """Latest version regardless of visibility (victim selection)."""
        return self.versions[-1][1]

    def compact(self, t: int) -> None:
        while len(self.versions) > 1 and self.versions[1][0] <= t:
            self.versions.pop(0)


@dataclass
class RabStats:
    l1_hits: int = 0
    l2_hits: int = 0
    misses: int = 0
    dropped: int = 0
    faults: int = 0
    bypass_hits: int = 0


class Rab:
    """One RAB instance shared by all clusters of a PMCA."""

    def __init__(self, platform: PlatformConfig, calib: CalibrationConfig,
                 sim=None, fabric=None):
        self.calib = calib
        self.sim = sim
        self.fabric = fabric
        self.l1 = [_VersionedSlot() for _ in range(platform.rab_l1_slots)]
        self.l2_banks = platform.rab_l2_banks
        self.l2_assoc = platform.rab_l2_assoc
        if platform.rab_l2_entries:
            self.l2_sets = platform.rab_l2_entries // (self.l2_assoc * self.l2_banks)
            self.l2 = [[[_VersionedSlot() for _ in range(self.l2_assoc)]
                        for _ in range(self.l2_sets)]
                       for _ in range(self.l2_banks)]
        else:
            self.l2_sets = 0
            self.l2 = []
        self.l2_search_cycles = -(-self.l2_assoc // calib.l2_ways_per_cycle)
        self.l2_unit_busy = 0
        self.miss_queue: deque[MissRecord] = deque()
        self.bypass_windows: list[tuple[int, int]] = []
        self.stats = RabStats()
        self._install_seq = 0

    # -- plumbing ---------------------------------------------------------

    def add_bypass_window(self, lo: int, hi: int) -> None:
        self.bypass_windows.append((lo, hi))

    def _emit(self, at: int, point: str, kind: int, flags: int,
              master: int, payload: int) -> None:
        if self.fabric is None:
            return
        if self.sim is None or at <= self.sim.domains["pmca"].local_now(self.sim.now):
            self.fabric.emit(point, kind, flags, master, payload)
        else:
            now_local = self.sim.domains["pmca"].local_now(self.sim.now)
            self.sim.schedule("pmca", at - now_local,
                              lambda: self.fabric.emit(point, kind, flags, master, payload))

    # -- translation ------------------------------------------------------

    def translate(self, va: int, master_id: int, is_write: bool, t: int,
                  flags: int = 0) -> TranslationOutcome:
        """Issue a translation at cycle t; returns the outcome with timing.

        Trace records (request at t; response / miss-enqueue at the outcome
        time) are emitted through the attached fabric.
        """
        req_kind = tracing.KIND_WRITE_REQ if is_write else tracing.KIND_READ_REQ
        resp_kind = tracing.KIND_WRITE_RESP if is_write else tracing.KIND_READ_RESP
        point = "rab_write" if is_write else "rab_read"

        for lo, hi in self.bypass_windows:
            if lo <= va < hi:
                self.stats.bypass_hits += 1
                self._emit(t, point + "_req", req_kind,
                           flags | tracing.FLAG_BYPASS, master_id, va)
                rflags = (flags | tracing.FLAG_BYPASS
                          | (tracing.OUTCOME_L1 << tracing.OUTCOME_SHIFT))
                self._emit(t + 1, point + "_resp", resp_kind, rflags, master_id, va)
                return TranslationOutcome("l1_hit", t + 1, va, bypass=True)

        self._emit(t, point + "_req", req_kind, flags, master_id, va)
        page = vpn(va)

        # L1: single-cycle, fully associative, never contends.
        for slot in self.l1:
            entry = slot.entry_at(t)
            if entry is not None and entry.valid and entry.vpn == page:
                if (is_write and not entry.write) or (not is_write and not entry.read):
                    self.stats.faults += 1
                    return TranslationOutcome("permission_fault", t + 1)
                self.stats.l1_hits += 1
                pa = (entry.ppn << 12) | (va & 0xFFF)
                rflags = flags | (tracing.OUTCOME_L1 << tracing.OUTCOME_SHIFT)
                self._emit(t + 1, point + "_resp", resp_kind, rflags, master_id, va)
                return TranslationOutcome("l1_hit", t + 1, pa)

        # L2: one search at a time; start after the L1 lookup cycle.
        if self.l2_sets:
            start = max(t + 1, self.l2_unit_busy)
            done = start + self.l2_search_cycles
            self.l2_unit_busy = done
            bank = page % self.l2_banks
            index = page % self.l2_sets
            for way in self.l2[bank][index]:
                entry = way.entry_at(t)
                if entry is not None and entry.valid and entry.vpn == page:
                    if (is_write and not entry.write) or (not is_write and not entry.read):
                        self.stats.faults += 1
                        return TranslationOutcome("permission_fault", done)
                    self.stats.l2_hits += 1
                    pa = (entry.ppn << 12) | (va & 0xFFF)
                    rflags = flags | (tracing.OUTCOME_L2 << tracing.OUTCOME_SHIFT)
                    self._emit(done, point + "_resp", resp_kind, rflags, master_id, va)
                    return TranslationOutcome("l2_hit", done, pa)
            miss_at = done
        else:
            miss_at = t + 1

        if len(self.miss_queue) >= self.calib.miss_queue_depth:
            self.stats.dropped += 1
            rflags = flags | (tracing.OUTCOME_DROPPED << tracing.OUTCOME_SHIFT)
            self._emit(miss_at, point + "_resp", tracing.KIND_MISS_ENQ,
                       rflags, master_id, va)
            return TranslationOutcome("miss_dropped", miss_at)

        self.stats.misses += 1
        self.miss_queue.append(MissRecord(va, master_id, is_write, miss_at))
        rflags = flags | (tracing.OUTCOME_MISS << tracing.OUTCOME_SHIFT)
        self._emit(miss_at, point + "_resp", tracing.KIND_MISS_ENQ,
                   rflags, master_id, va)
        return TranslationOutcome("miss_enqueued", miss_at)

    # -- configuration port -------------------------------------------------

    def config_write(self, level: str, coords: tuple, entry: TlbEntry | None,
                     t: int) -> int:
        """Write one table entry at cycle t; returns the cycle from which
        the entry serves translations."""
        visible = t + self.calib.rab_config_write_latency
        if entry is not None:
            self._install_seq += 1
            entry.install_seq = self._install_seq
        if level == "l1":
            (slot_i,) = coords
            if not (0 <= slot_i < len(self.l1)):
                raise ValueError(f"bad L1 slot {slot_i}")
            self.l1[slot_i].install(entry, visible)
        elif level == "l2":
            bank, index, way = coords
            if not (0 <= bank < self.l2_banks and 0 <= index < self.l2_sets
                    and 0 <= way < self.l2_assoc):
                raise ValueError(f"bad L2 coordinates {coords}")
            if entry is not None and (entry.vpn % self.l2_banks != bank
                                      or entry.vpn % self.l2_sets != index):
                raise ValueError(f"entry vpn 0x{entry.vpn:x} does not map to "
                                 f"bank {bank} set {index}")
            self.l2[bank][index][way].install(entry, visible)
        else:
            raise ValueError(f"unknown TLB level {level!r}")
        payload = 0 if entry is None else (entry.vpn << 20) | (entry.ppn & 0xFFFFF)
        self._emit(visible, "rab_config", tracing.KIND_CONFIG_WRITE, 0, 0, payload)
        return visible

    # -- miss queue ---------------------------------------------------------

    def pop_miss(self) -> MissRecord | None:
        if self.miss_queue:
            return self.miss_queue.popleft()
        return None

    # -- victim-selection views ----------------------------------------------

    def l1_view(self) -> list[TlbEntry | None]:
        """Newest version of each L1 slot (what the miss handler must treat
        as occupied, including not-yet-visible pending installs)."""
        return [slot.newest() for slot in self.l1]

    def l1_slot_of(self, page: int) -> int | None:
        """Slot whose newest version maps `page`, if any (install dedup)."""
        for i, slot in enumerate(self.l1):
            entry = slot.newest()
            if entry is not None and entry.valid and entry.vpn == page:
                return i
        return None
