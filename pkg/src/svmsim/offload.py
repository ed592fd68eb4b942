"""Offload runtime: descriptor construction, data movement, launch, report.

Two data-movement disciplines per argument:

* ``copy`` — before launch, the host copies the argument into the
  physically contiguous region the accelerator can address directly
  (rewriting every pointer of a linked structure on the way), and copies
  outputs back afterwards.  Kernel-side translation of those addresses is
  a single-cycle window hit, and produces no RAB misses.
* ``svm``  — the host passes virtual address pointers as-is; the kernel
  translates on demand and takes RAB misses on first touch.

The offload and kernel phases are serialized: total = offload + kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .faults import SimulationFault
from .machine import Machine
from .memory import PMCA_APERTURE, host_copy_cycles


@dataclass
class DataArg:
    name: str
    nbytes: int
    direction: str = "tofrom"   # to | from | tofrom
    mode: str = "svm"           # svm | copy
    layout: str = "flat"        # flat | linked
    nodes: int = 0              # linked only
    node_bytes: int = 0         # linked only
    va: int = 0                 # assigned at placement
    data: bytes = b""           # host-side buffer (inputs in, outputs out)

    def __post_init__(self):
        if self.nbytes < 0:
            raise ValueError("nbytes must be >= 0")
        if self.direction not in ("to", "from", "tofrom"):
            raise ValueError(f"bad direction {self.direction!r}")
        if self.mode not in ("svm", "copy"):
            raise ValueError(f"bad mode {self.mode!r}")
        if self.layout == "linked" and self.nodes < 1:
            raise ValueError("linked layout requires nodes >= 1")


@dataclass
class OffloadDescriptor:
    kernel: str
    args: list[DataArg] = field(default_factory=list)


@dataclass
class RunReport:
    offload_cycles: int
    kernel_cycles: int
    total_cycles: int
    l1_hits: int
    l2_hits: int
    misses: int
    meta: dict = field(default_factory=dict)


def place_arg(machine: Machine, arg: DataArg) -> int:
    """Give the argument an address and stage its input bytes.

    copy mode allocates inside the contiguous region; svm mode carves a
    host VA range and backs it with page-table frames.  Returns the base
    address the kernel should use.
    """
    if arg.mode == "copy":
        if not arg.va:
            arg.va = machine.alloc_copy(arg.nbytes)
    else:
        if not arg.va:
            arg.va = machine.alloc_va(arg.nbytes)
        machine.populate_va(arg.va, max(arg.nbytes, 1))
    if arg.data and arg.direction in ("to", "tofrom"):
        machine.write_va(arg.va, arg.data)
    return arg.va


def reserve_va_overlap(args: list[DataArg],
                       aperture: tuple[int, int] = PMCA_APERTURE) -> list[str]:
    """Check arg VA ranges against the accelerator's own address map.

    Any overlap means loads in the kernel would be decoded as PMCA-local
    instead of routed to SVM; returns one violation string per offender.
    """
    lo, hi = aperture
    violations = []
    for arg in args:
        if arg.nbytes == 0:
            continue
        a, b = arg.va, arg.va + arg.nbytes
        if a < hi and lo < b:
            violations.append(
                f"{arg.name}: va range [0x{a:08x}, 0x{b:08x}) overlaps "
                f"PMCA map [0x{lo:08x}, 0x{hi:08x})")
    return violations


def offload_phase_cycles(machine: Machine, desc: OffloadDescriptor) -> tuple[int, int]:
    """Host cycles spent before and after the kernel."""
    calib = machine.calib
    before = calib.offload_descriptor_cycles
    after = 0
    for arg in desc.args:
        if arg.mode != "copy":
            continue
        if arg.direction in ("to", "tofrom"):
            nodes = arg.nodes if arg.layout == "linked" else 0
            before += host_copy_cycles(calib, arg.nbytes, nodes)
        if arg.direction in ("from", "tofrom"):
            after += host_copy_cycles(calib, arg.nbytes, 0)
    return before, after


def run_offload(machine: Machine, desc: OffloadDescriptor,
                programs: dict) -> RunReport:
    """Execute one offload: reservation check, copy-in, kernel, copy-out."""
    violations = reserve_va_overlap(desc.args)
    if violations:
        raise SimulationFault("VA reservation violation: " + "; ".join(violations))
    before, after = offload_phase_cycles(machine, desc)
    s0 = machine.rab.stats
    base = (s0.l1_hits + s0.bypass_hits, s0.l2_hits, s0.misses)
    kernel_cycles = machine.execute(programs)
    s1 = machine.rab.stats
    l1 = s1.l1_hits + s1.bypass_hits - base[0]
    l2 = s1.l2_hits - base[1]
    misses = s1.misses - base[2]
    for arg in desc.args:
        if arg.direction in ("from", "tofrom"):
            arg.data = machine.read_va(arg.va, arg.nbytes)
    offload_cycles = before + after
    return RunReport(offload_cycles=offload_cycles,
                     kernel_cycles=kernel_cycles,
                     total_cycles=offload_cycles + kernel_cycles,
                     l1_hits=l1, l2_hits=l2, misses=misses,
                     meta={"kernel": desc.kernel})
