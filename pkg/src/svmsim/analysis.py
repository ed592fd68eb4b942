"""Three-layer trace analysis.

Layer 1 (`parse`) reads the binary file and yields a time-sorted list of
generic events plus the header properties.

Layer 2 (`decode`) pairs requests with responses per (attachment point,
master, FIFO order) and assembles platform-typed events:

* ``MemoryAccess``   — one DRAM/bus transaction (a bus-point req/resp pair,
  or a PTW-flagged pair at the RAB read port);
* ``TlbEpisode``     — one translation: an L1 hit (span 1), an L2 hit
  (span 1 + search), or a full miss with queue/walk/config/wake phases
  reconstructed from the miss-enqueue, sleep, PTW, config-write, and wake
  records;
* ``SyncEvent``      — one barrier release (the set of woken cores).

Every generic event is consumed by exactly one typed event or reported in
`diagnostics` — nothing is silently dropped.

Layer 3 (`analyze`) computes per-core latency statistics, the TLB outcome
breakdown, a bus-occupancy timeline, and evaluates named assertions,
reporting the first counterexample of any that fail.

`rescale` multiplies every latency and phase duration by a clock ratio
(timestamps stay in emulation cycles), so latencies measured on the slow
emulated platform can be read as target-silicon cycles.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace

from .tracing import (ATTACH_POINTS, FLAG_BARRIER, FLAG_DMA, FLAG_PTW,
                      KIND_DRAIN_MARKER, KIND_MISS_ENQ, KIND_READ_REQ,
                      KIND_READ_RESP, KIND_SLEEP, KIND_WAKE, KIND_WRITE_REQ,
                      KIND_WRITE_RESP, OUTCOME_DROPPED, OUTCOME_L1,
                      outcome_of, parse_trace)


class TraceFormatError(Exception):
    pass


# ---------------------------------------------------------------------------
# Layer 1

@dataclass(frozen=True)
class GenericEvent:
    timestamp: int
    tracer_id: int
    kind: int
    flags: int
    master_id: int
    payload: int
    index: int          # position in file, the last-resort tiebreaker


def parse(path: str) -> tuple[dict, list[GenericEvent]]:
    """Read a trace file into header properties + time-sorted events."""
    try:
        header, records = parse_trace(path)
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from None
    events = [GenericEvent(r.timestamp, r.tracer_id, r.kind, r.flags,
                           r.master_id, r.payload, i)
              for i, r in enumerate(records)]
    events.sort(key=lambda e: (e.timestamp, e.tracer_id, e.index))
    return header, events


# ---------------------------------------------------------------------------
# Layer 2

@dataclass
class MemoryAccess:
    core: int
    address: int
    nbytes: int
    is_write: bool
    request_ts: int
    response_ts: int
    latency: float
    dma: bool = False
    ptw: bool = False


@dataclass
class TlbEpisode:
    core: int
    va: int
    outcome: str                 # l1_hit | l2_hit | miss | dropped
    request_ts: int
    complete_ts: int             # hit response / wake (miss) / enqueue (dropped)
    span: float                  # complete_ts - request_ts at ratio 1
    phases: dict = field(default_factory=dict)   # miss only: queue/ptw/config/wake
    walks: list = field(default_factory=list)    # PTW MemoryAccesses (miss only)


@dataclass
class SyncEvent:
    cores: tuple
    ts: int


@dataclass
class DecodedTrace:
    accesses: list
    episodes: list
    syncs: list
    configs: list          # config_write events not absorbed by an episode
    drains: list
    diagnostics: list
    consumed: int
    total: int


def _point_map(custom=None) -> dict[int, str]:
    if custom is not None:
        return dict(custom)
    return {i: p for i, p in enumerate(ATTACH_POINTS)}


def decode(events: list[GenericEvent], point_map=None) -> DecodedTrace:
    """Pair and type a sorted generic-event stream."""
    points = _point_map(point_map)
    accesses: list[MemoryAccess] = []
    episodes: list[TlbEpisode] = []
    syncs: list[SyncEvent] = []
    configs: list[GenericEvent] = []
    drains: list[GenericEvent] = []
    diagnostics: list[str] = []
    consumed = 0

    pending_req: dict[tuple, deque] = defaultdict(deque)    # translation reqs
    pending_ptw: dict[int, deque] = defaultdict(deque)      # walk reads per master
    pending_bus: dict[tuple, deque] = defaultdict(deque)
    open_misses: list[TlbEpisode] = []                      # enq order, unwoken
    sleeps: dict[int, GenericEvent] = {}
    barrier_wakes: dict[tuple, list] = defaultdict(list)
    ptw_pool: list[MemoryAccess] = []
    config_pool: list[GenericEvent] = []

    def eat(n=1):
        nonlocal consumed
        consumed += n

    for ev in events:
        if ev.tracer_id == 0xFFFF or ev.kind == KIND_DRAIN_MARKER:
            drains.append(ev)
            eat()
            continue
        point = points.get(ev.tracer_id)
        if point is None:
            diagnostics.append(f"unknown tracer {ev.tracer_id} at t={ev.timestamp}")
            eat()
            continue

        if point in ("rab_read_req", "rab_write_req"):
            if ev.flags & FLAG_PTW:
                pending_ptw[ev.master_id].append(ev)
            else:
                chan = ("rd" if point == "rab_read_req" else "wr", ev.master_id)
                pending_req[chan].append(ev)
            continue   # consumed when its partner arrives

        if point in ("rab_read_resp", "rab_write_resp"):
            chan = ("rd" if point == "rab_read_resp" else "wr", ev.master_id)
            if ev.flags & FLAG_PTW:
                q = pending_ptw[ev.master_id]
                if not q:
                    diagnostics.append(
                        f"walk response without request at t={ev.timestamp}")
                    eat()
                    continue
                req = q.popleft()
                acc = MemoryAccess(ev.master_id, req.payload & 0xFFFF_FFFF,
                                   req.payload >> 32, False, req.timestamp,
                                   ev.timestamp,
                                   float(ev.timestamp - req.timestamp), ptw=True)
                ptw_pool.append(acc)
                eat(2)
                continue
            q = pending_req[chan]
            if not q:
                diagnostics.append(
                    f"response without request at t={ev.timestamp} "
                    f"(master 0x{ev.master_id:x})")
                eat()
                continue
            req = q.popleft()
            out = outcome_of(ev.flags)
            if ev.kind == KIND_MISS_ENQ:
                outcome = "dropped" if out == OUTCOME_DROPPED else "miss"
                ep = TlbEpisode(ev.master_id, req.payload, outcome,
                                req.timestamp, ev.timestamp,
                                float(ev.timestamp - req.timestamp))
                episodes.append(ep)
                if outcome == "miss":
                    ep.phases["enqueue"] = ev.timestamp
                    open_misses.append(ep)
                eat(2)
            else:
                outcome = "l1_hit" if out == OUTCOME_L1 else "l2_hit"
                episodes.append(TlbEpisode(
                    ev.master_id, req.payload, outcome, req.timestamp,
                    ev.timestamp, float(ev.timestamp - req.timestamp)))
                eat(2)
            continue

        if point == "bus":
            if ev.kind in (KIND_READ_REQ, KIND_WRITE_REQ):
                pending_bus[(ev.kind & 2, ev.master_id)].append(ev)
                continue
            if ev.kind in (KIND_READ_RESP, KIND_WRITE_RESP):
                q = pending_bus[(ev.kind & 2, ev.master_id)]
                if not q:
                    diagnostics.append(
                        f"bus response without request at t={ev.timestamp}")
                    eat()
                    continue
                req = q.popleft()
                accesses.append(MemoryAccess(
                    ev.master_id, req.payload & 0xFFFF_FFFF, req.payload >> 32,
                    ev.kind == KIND_WRITE_RESP, req.timestamp, ev.timestamp,
                    float(ev.timestamp - req.timestamp),
                    dma=bool(ev.flags & FLAG_DMA)))
                eat(2)
                continue
            diagnostics.append(f"unexpected bus record kind {ev.kind}")
            eat()
            continue

        if point == "rab_config":
            config_pool.append(ev)
            continue

        if point == "cluster_sync":
            if ev.kind == KIND_SLEEP and not ev.flags & FLAG_BARRIER:
                sleeps[ev.master_id] = ev
                eat()
                continue
            if ev.kind == KIND_WAKE and not ev.flags & FLAG_BARRIER:
                for ep in open_misses:
                    if ep.core == ev.master_id and ep.va == ev.payload:
                        ep.phases["wake_ts"] = ev.timestamp
                        ep.complete_ts = ev.timestamp
                        ep.span = float(ev.timestamp - ep.request_ts)
                        open_misses.remove(ep)
                        break
                else:
                    diagnostics.append(
                        f"wake without open miss at t={ev.timestamp} "
                        f"(master 0x{ev.master_id:x})")
                eat()
                continue
            if ev.kind == KIND_SLEEP:       # barrier arrival
                eat()
                continue
            if ev.kind == KIND_WAKE:        # barrier release, grouped by id
                barrier_wakes[(ev.timestamp, ev.payload)].append(ev.master_id)
                eat()
                continue
            diagnostics.append(f"unexpected sync record kind {ev.kind}")
            eat()
            continue

        diagnostics.append(f"record at unhandled point {point}")
        eat()

    # Unmatched requests are diagnostics.
    for chan, q in list(pending_req.items()) + list(pending_bus.items()):
        for req in q:
            diagnostics.append(
                f"request without response at t={req.timestamp} "
                f"(master 0x{req.master_id:x})")
            eat()
    for q in pending_ptw.values():
        for req in q:
            diagnostics.append(f"walk request without response at t={req.timestamp}")
            eat()

    for key in sorted(barrier_wakes):
        syncs.append(SyncEvent(tuple(sorted(barrier_wakes[key])), key[0]))

    _assemble_misses(episodes, ptw_pool, config_pool, sleeps, configs,
                     diagnostics, eat)

    return DecodedTrace(accesses + ptw_pool, episodes, syncs,
                        configs, drains, diagnostics, consumed, len(events))


def _assemble_misses(episodes, ptw_pool, config_pool, sleeps, configs,
                     diagnostics, eat) -> None:
    """Attach walks, configs, and sleeps to miss episodes (handling order =
    enqueue order: misses are dequeued FIFO by a single handler)."""
    misses = [e for e in episodes if e.outcome == "miss"]
    handled = [e for e in misses if "wake_ts" in e.phases]
    levels = len(ptw_pool) // len(handled) if handled else 0
    if handled and len(ptw_pool) % len(handled):
        diagnostics.append(
            f"{len(ptw_pool)} walk accesses over {len(handled)} handled "
            f"misses: uneven page-table depth")
    ptw_pool.sort(key=lambda a: a.request_ts)
    config_pool.sort(key=lambda e: e.timestamp)
    ci = 0
    for k, ep in enumerate(handled):
        sleep = sleeps.pop(ep.core, None)
        if sleep is not None:
            ep.phases["sleep_ts"] = sleep.timestamp
        walks = ptw_pool[k * levels:(k + 1) * levels]
        ep.walks = walks
        if ci < len(config_pool):
            cfg = config_pool[ci]
            ci += 1
            ep.phases["config_ts"] = cfg.timestamp
            eat()
        if walks and "config_ts" in ep.phases and "wake_ts" in ep.phases:
            enq = ep.phases.pop("enqueue")
            walk_start = walks[0].request_ts
            walk_end = walks[-1].response_ts
            ep.phases["queue"] = float(walk_start - enq)
            ep.phases["ptw"] = float(walk_end - walk_start)
            ep.phases["config"] = float(ep.phases["config_ts"] - walk_end)
            ep.phases["wake"] = float(ep.phases["wake_ts"] - ep.phases["config_ts"])
    configs.extend(config_pool[ci:])
    for _ in config_pool[ci:]:
        eat()
    for sleep in sleeps.values():
        # Already counted at receipt; the missing wake is the anomaly.
        diagnostics.append(f"sleep without wake at t={sleep.timestamp} "
                           f"(master 0x{sleep.master_id:x})")
    for ep in misses:
        if "wake_ts" not in ep.phases:
            diagnostics.append(
                f"miss at t={ep.request_ts} (va 0x{ep.va:08x}) never woken")


# ---------------------------------------------------------------------------
# Layer 3

@dataclass
class Verdict:
    name: str
    passed: bool
    counterexample: str | None = None

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f" — {self.counterexample}" if self.counterexample else ""
        return f"{status}: {self.name}{extra}"


@dataclass
class Report:
    per_core: dict
    tlb: dict
    occupancy: list
    verdicts: list

    def to_text(self) -> str:
        lines = ["per-core DRAM latency:"]
        for core in sorted(self.per_core):
            s = self.per_core[core]
            lines.append(f"  core 0x{core:05x}: n={s['count']} "
                         f"mean={s['mean']:.2f} max={s['max']:.0f}")
        t = self.tlb
        lines.append(f"TLB: l1={t['l1_hit']} l2={t['l2_hit']} "
                     f"miss={t['miss']} dropped={t['dropped']}")
        if t.get("miss_phase_means"):
            phases = ", ".join(f"{k}={v:.1f}"
                               for k, v in t["miss_phase_means"].items())
            lines.append(f"miss phases (mean cycles): {phases}")
        lines.append("assertions:")
        for v in self.verdicts:
            lines.append(f"  {v}")
        return "\n".join(lines)


def _latency_stats(accs) -> dict:
    per_core: dict[int, dict] = {}
    for acc in accs:
        s = per_core.setdefault(acc.core, {"count": 0, "sum": 0.0, "max": 0.0,
                                           "histogram": defaultdict(int)})
        s["count"] += 1
        s["sum"] += acc.latency
        s["max"] = max(s["max"], acc.latency)
        s["histogram"][math.ceil(acc.latency)] += 1
    for s in per_core.values():
        s["mean"] = s["sum"] / s["count"]
        s["histogram"] = dict(s["histogram"])
    return per_core


def bus_occupancy(decoded: DecodedTrace, bucket: int = 1024) -> list:
    """(bucket start, bytes moved) assuming uniform rate per transfer."""
    buckets: dict[int, float] = defaultdict(float)
    for acc in decoded.accesses:
        if not acc.dma:
            continue
        start, end = acc.request_ts, acc.response_ts
        if end <= start:
            continue
        rate = acc.nbytes / (end - start)
        b = start // bucket
        while b * bucket < end:
            lo = max(start, b * bucket)
            hi = min(end, (b + 1) * bucket)
            buckets[b] += rate * (hi - lo)
            b += 1
    return sorted((b * bucket, v) for b, v in buckets.items())


def analyze(decoded: DecodedTrace, assertions=None, bucket: int = 1024) -> Report:
    dram = [a for a in decoded.accesses if not a.ptw]
    tlb = {"l1_hit": 0, "l2_hit": 0, "miss": 0, "dropped": 0}
    for ep in decoded.episodes:
        key = ep.outcome if ep.outcome in tlb else "miss"
        tlb[key] += 1
    phase_sums: dict[str, list] = defaultdict(list)
    for ep in decoded.episodes:
        for k in ("queue", "ptw", "config", "wake"):
            if k in ep.phases:
                phase_sums[k].append(ep.phases[k])
    tlb["miss_phase_means"] = {k: sum(v) / len(v)
                               for k, v in phase_sums.items() if v}
    checks = default_assertions() if assertions is None else assertions
    verdicts = [a(decoded) for a in checks]
    return Report(_latency_stats(dram), tlb, bus_occupancy(decoded, bucket),
                  verdicts)


# -- assertion combinators ---------------------------------------------------

def assertion(name: str):
    """Wrap a predicate returning (ok, counterexample) into an assertion."""
    def wrap(fn):
        def run(decoded) -> Verdict:
            ok, ce = fn(decoded)
            return Verdict(name, ok, ce)
        run.assertion_name = name
        return run
    return wrap


def forall(items, pred, describe):
    """First item violating pred becomes the counterexample."""
    for item in items:
        if not pred(item):
            return False, describe(item)
    return True, None


def episodes_where(decoded, **conds):
    out = decoded.episodes
    for key, value in conds.items():
        out = [e for e in out if getattr(e, key) == value]
    return out


def within_windows(ts: float, windows) -> bool:
    return any(lo <= ts < hi for lo, hi in windows)


@assertion("translation latency is positive")
def positive_latency(decoded):
    return forall(decoded.episodes, lambda e: e.span >= 1,
                  lambda e: f"episode at t={e.request_ts} span {e.span}")


@assertion("L1 hits stay single-cycle during L2 searches (hit under miss)")
def hit_under_miss(decoded):
    windows = [(e.request_ts + 1, e.complete_ts)
               for e in decoded.episodes if e.outcome in ("l2_hit", "miss")]
    l1 = [e for e in episodes_where(decoded, outcome="l1_hit")
          if within_windows(e.request_ts, windows)]
    return forall(l1, lambda e: e.span == 1,
                  lambda e: f"L1 hit at t={e.request_ts} took {e.span} cycles "
                            f"during an L2 search")


@assertion("every handled miss retries to an L1 hit")
def miss_retry_hits(decoded):
    hits = [e for e in decoded.episodes if e.outcome == "l1_hit"]

    def retried(miss):
        if "wake_ts" not in miss.phases:
            return False
        wake = miss.phases["wake_ts"]
        return any(h.core == miss.core and h.va == miss.va
                   and h.request_ts >= wake for h in hits)

    return forall(episodes_where(decoded, outcome="miss"), retried,
                  lambda e: f"miss at t={e.request_ts} (va 0x{e.va:08x}) "
                            f"never retried to a hit")


@assertion("memory accesses respect request/response order")
def ordered_accesses(decoded):
    return forall(decoded.accesses, lambda a: a.response_ts >= a.request_ts,
                  lambda a: f"access at t={a.request_ts} responds at "
                            f"{a.response_ts}")


def default_assertions():
    return [positive_latency, hit_under_miss, miss_retry_hits,
            ordered_accesses]


# ---------------------------------------------------------------------------
# Clock-ratio rescaling

def rescale(decoded: DecodedTrace, ratio: float) -> DecodedTrace:
    """Multiply every latency/phase duration by `ratio` (timestamps keep
    their emulation-clock values)."""
    if not ratio > 0:
        raise ValueError(f"clock ratio must be positive, got {ratio}")
    accesses = [replace(a, latency=a.latency * ratio) for a in decoded.accesses]
    episodes = []
    for ep in decoded.episodes:
        phases = dict(ep.phases)
        for k in ("queue", "ptw", "config", "wake"):
            if k in phases:
                phases[k] = phases[k] * ratio
        episodes.append(replace(
            ep, span=ep.span * ratio, phases=phases,
            walks=[replace(w, latency=w.latency * ratio) for w in ep.walks]))
    return DecodedTrace(accesses, episodes, decoded.syncs, decoded.configs,
                        decoded.drains, list(decoded.diagnostics),
                        decoded.consumed, decoded.total)
