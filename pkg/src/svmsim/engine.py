"""Discrete-event core with named, gateable clock domains.

Every event belongs to a clock domain ("host", "pmca", ...).  A domain keeps
its own local time; gating a domain freezes that local clock while global
time keeps advancing, and ungating resumes it exactly where it stopped.
Events pending in a gated domain are re-anchored at ungate so the
domain-local schedule is undisturbed — code running inside the domain cannot
tell it was ever gated.

Determinism: events fire in (global due time, domain name, insertion order)
order, so two runs issuing the same schedule calls fire identically.
"""

from __future__ import annotations

import heapq
from typing import Callable


class EventLimitError(Exception):
    """Raised when a run exceeds its event budget (usually a livelock)."""


class Event:
    __slots__ = ("due_local", "domain", "seq", "action", "cancelled", "push_id")

    def __init__(self, due_local: int, domain: "ClockDomain", seq: int,
                 action: Callable[[], None]):
        self.due_local = due_local
        self.domain = domain
        self.seq = seq
        self.action = action
        self.cancelled = False
        self.push_id = 0   # bumped on every (re-)push; older heap copies go stale

    def cancel(self) -> None:
        self.cancelled = True


class ClockDomain:
    """One named clock.  global_time = local_time + offset while running."""

    def __init__(self, name: str):
        self.name = name
        self._offset = 0
        self.gated = False
        self._frozen_local = 0
        # Events that reached the head of the queue (or were scheduled)
        # while this domain was gated wait here until ungate.
        self._parked: list[Event] = []

    def local_now(self, global_now: int) -> int:
        if self.gated:
            return self._frozen_local
        return global_now - self._offset

    def to_global(self, local_time: int) -> int:
        return local_time + self._offset


class Simulator:
    """Single-queue event simulator.

    The heap holds (due_global, domain_name, seq, push_id, event) tuples.
    Re-pushing an event (at ungate) bumps its push_id, so any older tuple
    still in the heap is recognised as stale when popped and skipped.
    """

    def __init__(self, domains: tuple[str, ...] = ("host", "pmca"),
                 max_events: int = 50_000_000):
        self.domains = {name: ClockDomain(name) for name in domains}
        self._heap: list[tuple[int, str, int, int, Event]] = []
        self._seq = 0
        self.now = 0          # global time of the event being fired
        self.max_events = max_events
        self._fired = 0

    # -- scheduling -------------------------------------------------------

    def schedule(self, domain: str, delay: int, action: Callable[[], None]) -> Event:
        """Schedule `action` to run `delay` domain-local cycles from now."""
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        dom = self.domains[domain]
        return self.schedule_at_local(domain, dom.local_now(self.now) + delay, action)

    def schedule_at_local(self, domain: str, due_local: int,
                          action: Callable[[], None]) -> Event:
        dom = self.domains[domain]
        if due_local < dom.local_now(self.now):
            raise ValueError(f"due_local {due_local} is in the past of {domain}")
        ev = Event(due_local, dom, self._next_seq(), action)
        if dom.gated:
            dom._parked.append(ev)
        else:
            self._push(ev)
        return ev

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _push(self, ev: Event) -> None:
        due_global = ev.domain.to_global(ev.due_local)
        if due_global < self.now:
            raise ValueError(
                f"event in domain {ev.domain.name} due at global {due_global}, "
                f"now is {self.now}")
        ev.push_id += 1
        heapq.heappush(self._heap, (due_global, ev.domain.name, ev.seq, ev.push_id, ev))

    # -- gating -----------------------------------------------------------

    def gate(self, domain: str) -> None:
        """Freeze a domain's local clock at its current value."""
        dom = self.domains[domain]
        if dom.gated:
            raise RuntimeError(f"domain {domain!r} is already gated")
        dom._frozen_local = dom.local_now(self.now)
        dom.gated = True

    def ungate(self, domain: str) -> None:
        """Resume a domain; its pending events keep their local schedule."""
        dom = self.domains[domain]
        if not dom.gated:
            raise RuntimeError(f"domain {domain!r} is not gated")
        dom._offset = self.now - dom._frozen_local
        dom.gated = False
        parked, dom._parked = dom._parked, []
        live_in_heap = [ev for (_, _, _, pid, ev) in self._heap
                        if ev.domain is dom and not ev.cancelled
                        and pid == ev.push_id]
        for ev in parked:
            if not ev.cancelled:
                self._push(ev)
        for ev in live_in_heap:
            self._push(ev)

    # -- run loop ---------------------------------------------------------

    def run_until_idle(self) -> int:
        """Fire events until the queue drains.  Returns the global time of
        the last event fired (0 if none fired)."""
        last = 0
        while self._heap:
            due_global, _, _, push_id, ev = heapq.heappop(self._heap)
            if ev.cancelled or push_id != ev.push_id:
                continue
            dom = ev.domain
            if dom.gated:
                dom._parked.append(ev)
                continue
            self.now = due_global
            self._fired += 1
            if self._fired > self.max_events:
                raise EventLimitError(
                    f"exceeded {self.max_events} events at global time {self.now}")
            ev.action()
            last = due_global
        return last
