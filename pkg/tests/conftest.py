"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import struct

import pytest

from svmsim.config import CalibrationConfig, PlatformConfig
from svmsim.machine import Machine
from svmsim.memory import vpn
from svmsim.rab import TlbEntry
from svmsim.tracing import HEADER, MAGIC, VERSION, TraceRecord


def small_platform(**overrides) -> PlatformConfig:
    """A fast-to-simulate design point for unit tests."""
    base = dict(n_clusters=2, pes_per_cluster=4, l1_spm_kib=64)
    base.update(overrides)
    return PlatformConfig(**base)


@pytest.fixture
def make_machine():
    """Factory: make_machine(platform-overrides..., calib=..., seed=...)."""

    def build(calib: CalibrationConfig | None = None, seed: int = 0,
              trace_depth: int = 65536, victim_policy: str = "fifo",
              **overrides) -> Machine:
        return Machine(small_platform(**overrides), calib, seed=seed,
                       trace_depth=trace_depth, victim_policy=victim_policy)

    return build


def premap(machine: Machine, va: int, nbytes: int) -> None:
    """Back a VA range with frames and pre-install RAB L1 entries so a
    kernel can touch it from cycle 0 without misses."""
    machine.populate_va(va, max(nbytes, 1))
    first, last = vpn(va), vpn(va + max(nbytes, 1) - 1)
    for i, page in enumerate(range(first, last + 1)):
        ppn = machine.page_table.lookup(page)[0]
        slot = machine.rab.l1_slot_of(page)
        if slot is None:
            view = machine.rab.l1_view()
            free = [j for j, e in enumerate(view) if e is None]
            slot = free[0] if free else i % len(view)
        machine.rab.config_write(
            "l1", (slot,), TlbEntry(vpn=page, ppn=ppn),
            t=-machine.calib.rab_config_write_latency)


def write_trace(path, records, platform_hash: int = 0,
                clock_ratio: float = 1.0) -> str:
    """Write a synthetic trace file from (ts, tracer, kind, flags, master,
    payload) tuples or TraceRecord objects."""
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, 0, platform_hash,
                             len(records), clock_ratio))
        for rec in records:
            if not isinstance(rec, TraceRecord):
                rec = TraceRecord(*rec)
            fh.write(rec.pack())
    return str(path)


def pack_header(platform_hash: int = 0, count: int = 0,
                clock_ratio: float = 1.0) -> bytes:
    """Independently constructed header bytes (golden oracle)."""
    return (MAGIC
            + struct.pack("<H", VERSION)
            + struct.pack("<H", 0)
            + struct.pack("<I", platform_hash)
            + struct.pack("<Q", count)
            + struct.pack("<d", clock_ratio)
            + b"\x00" * 4)
