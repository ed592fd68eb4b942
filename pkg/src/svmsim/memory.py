"""Shared DRAM, per-cluster SPM banks, the host page table, and host copy cost.

Addresses are 32-bit; pages are 4 KiB.  DRAM is a real byte-addressed backing
store so benchmark kernels move actual data and results can be checked
against plain Python/numpy references.

Timing model:

* DRAM: each port (one per requesting cluster, one for the host) serializes
  its requests FIFO.  An uncontended access of ``b`` bytes completes after
  ``base_latency + ceil(b / beat_bytes) * beat_cycles`` cycles.
* SPM: one access per bank per cycle, latency 1; same-cycle conflicts on a
  bank serialize.
* Host copy: ``ceil(bytes / host_copy_bytes_per_cycle)`` plus a fixed
  pointer-rewrite charge per linked-data-structure node.
"""

from __future__ import annotations

from .config import CalibrationConfig, PlatformConfig

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT

DRAM_BASE = 0x8000_0000
DRAM_SIZE = 64 << 20
# Top 8 MiB of DRAM: physically contiguous region used by copy-based
# offloads.  PMCA accesses to it bypass translation (identity window).
COPY_REGION_SIZE = 8 << 20
COPY_REGION_BASE = DRAM_BASE + DRAM_SIZE - COPY_REGION_SIZE

# PMCA-local address aperture; host VAs must stay clear of it so that
# shared-pointer offloads never alias accelerator-private addresses.
PMCA_APERTURE = (0x1000_0000, 0x3000_0000)
HOST_VA_BASE = 0x4000_0000


def vpn(addr: int) -> int:
    return addr >> PAGE_SHIFT


class MemoryError_(Exception):
    """Out-of-range physical address or bad bank index."""


class PageFault(Exception):
    def __init__(self, va: int):
        self.va = va
        super().__init__(f"page fault at va 0x{va:08x}")


class PageTable:
    """Host page table: vpn -> (physical page, readable, writable).

    The walk itself is charged by :meth:`Dram.walk_reads`; this class is the
    pure mapping plus a monotonically growing physical-frame allocator.
    """

    def __init__(self, levels: int = 2):
        self.levels = levels
        self.map: dict[int, tuple[int, bool, bool]] = {}
        self._next_frame = DRAM_BASE >> PAGE_SHIFT

    def install(self, va_page: int, pa_page: int, read: bool = True,
                write: bool = True) -> None:
        self.map[va_page] = (pa_page, read, write)

    def alloc_frames(self, n_pages: int) -> int:
        """Reserve n physical pages; returns the first frame number."""
        first = self._next_frame
        limit = COPY_REGION_BASE >> PAGE_SHIFT
        if first + n_pages > limit:
            raise MemoryError_("out of physical frames")
        self._next_frame = first + n_pages
        return first

    def lookup(self, va_page: int) -> tuple[int, bool, bool] | None:
        return self.map.get(va_page)


class Dram:
    """Fixed-latency, beat-serialized DRAM with per-port FIFO queueing."""

    def __init__(self, calib: CalibrationConfig, n_ports: int):
        self.calib = calib
        self.data = bytearray(DRAM_SIZE)
        self.port_busy = [0] * n_ports

    def _check(self, pa: int, nbytes: int) -> None:
        if not (DRAM_BASE <= pa and pa + nbytes <= DRAM_BASE + DRAM_SIZE):
            raise MemoryError_(f"physical address 0x{pa:08x}+{nbytes} outside DRAM")

    def service_cycles(self, nbytes: int) -> int:
        c = self.calib
        beats = -(-nbytes // c.dram_beat_bytes)   # ceil
        return c.dram_base_latency + beats * c.dram_beat_cycles

    def access(self, port: int, pa: int, nbytes: int, is_write: bool,
               t: int, payload: bytes | None = None) -> tuple[int, int]:
        """Issue an access at cycle t; returns (start, completion) cycles.

        Writes replace the addressed range with `payload`; reads return
        timing only — use :meth:`read` for the bytes.
        """
        self._check(pa, nbytes)
        start = max(t, self.port_busy[port])
        done = start + self.service_cycles(nbytes)
        self.port_busy[port] = done
        if is_write and nbytes:
            assert payload is not None and len(payload) == nbytes
            off = pa - DRAM_BASE
            self.data[off:off + nbytes] = payload
        return start, done

    def read(self, pa: int, nbytes: int) -> bytes:
        self._check(pa, nbytes)
        off = pa - DRAM_BASE
        return bytes(self.data[off:off + nbytes])

    def write(self, pa: int, payload: bytes) -> None:
        """Zero-time backing-store write (host-side setup, DMA payload)."""
        self._check(pa, len(payload))
        off = pa - DRAM_BASE
        self.data[off:off + len(payload)] = payload


class SpmBanks:
    """Per-cluster L1 scratchpad: real storage plus per-bank busy-until."""

    def __init__(self, platform: PlatformConfig):
        self.n_banks = platform.l1_spm_banks
        self.size = platform.l1_spm_kib << 10
        self.data = bytearray(self.size)
        self.bank_busy = [0] * self.n_banks

    def access(self, bank: int, t: int) -> int:
        if not (0 <= bank < self.n_banks):
            raise MemoryError_(f"bad SPM bank {bank}")
        start = max(t, self.bank_busy[bank])
        done = start + 1
        self.bank_busy[bank] = done
        return done


def walk_cycles(calib: CalibrationConfig) -> int:
    """Uncontended page-table-walk cost: `levels` sequential 4-byte reads."""
    per_level = calib.dram_base_latency + calib.dram_beat_cycles
    return calib.ptw_levels * per_level


def pt_walk(pt: PageTable, dram: Dram, port: int, va: int, t: int,
            on_read=None) -> tuple[tuple[int, bool, bool] | None, int]:
    """Walk the page table for `va` starting at cycle t.

    Charges ptw_levels sequential 4-byte DRAM reads on `port`; `on_read`
    (if given) is called as on_read(level, start, done) per level so the
    caller can trace the walk.  Returns (entry-or-None, completion cycle);
    None means the page is unmapped and the fault costs the full walk too.
    """
    now = t
    # Walk reads target the table structure itself; charge them at the
    # base of DRAM (the table's frames are not part of the data heap).
    for level in range(pt.levels):
        start, now = dram.access(port, DRAM_BASE, 4, False, now)
        if on_read is not None:
            on_read(level, start, now)
    return pt.lookup(vpn(va)), now


def host_copy_cycles(calib: CalibrationConfig, nbytes: int, lds_nodes: int = 0) -> int:
    """Host cycles to copy a buffer into/out of the contiguous region,
    including pointer rewriting for linked data structures."""
    move = -(-nbytes // calib.host_copy_bytes_per_cycle)
    return move + lds_nodes * calib.lds_rewrite_cycles_per_node
