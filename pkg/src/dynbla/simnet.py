"""Deterministic discrete-event network simulator.

One scheduled event per step, chosen by a seeded RNG with weight 1 + age so
that no deliverable message starves. Identical (scenario, seed) pairs yield
byte-identical traces; the RNG is consulted nowhere else.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import random
from dataclasses import dataclass, field

from .lattice import digest

DEFAULT_STEP_CAP = 200_000

IDLE = "I"
CORRECT = "C"
HALTED = "H"
BYZANTINE = "B"


class Msg:
    __slots__ = ("desc", "obj", "body", "_hash")

    def __init__(self, desc: str, obj: str, body: dict):
        self.desc = desc
        self.obj = obj
        self.body = body
        self._hash = None

    def mhash(self) -> str:
        if self._hash is None:
            self._hash = digest(["m", self.desc, self.obj, self.body])[:16]
        return self._hash

    def __repr__(self):
        return f"Msg({self.desc}, obj={self.obj})"


@dataclass(slots=True)
class Event:
    enq: int
    frm: str
    to: str
    msg: Msg


@dataclass(slots=True)
class Trigger:
    """A not-before bound: an absolute step or a named fact plus offset."""

    at: int | None = None
    fact: str | None = None
    offset: int = 0

    def due(self, sim) -> int | None:
        if self.fact is not None:
            seen = sim.facts.get(self.fact)
            if seen is None:
                return None
            return seen + self.offset
        return self.at

    def ready(self, sim) -> bool:
        due = self.due(sim)
        return due is not None and sim.next_step >= due

    def eventually(self, sim) -> bool:
        return self.due(sim) is not None


@dataclass
class HoldRule:
    """Diverts matching sends into a buffer until the release trigger."""

    frm: set | None = None
    to: set | None = None
    desc: str = ""
    until: Trigger | None = None
    buffer: list = field(default_factory=list)
    released: bool = False

    def matches(self, frm, to, msg) -> bool:
        if self.released:
            return False
        if self.frm is not None and frm not in self.frm:
            return False
        if self.to is not None and to not in self.to:
            return False
        return msg.desc.startswith(self.desc)


@dataclass(slots=True)
class _External:
    trigger: Trigger
    kind: str
    fire: object
    to: str
    desc: str
    detail: dict | None
    done: bool = False


@dataclass(slots=True)
class _Proc:
    automaton: object
    api: object
    status: str = IDLE
    script: object = None


class Api:
    """Per-process handle: a process can only send as itself."""

    __slots__ = ("_sim", "pid")

    def __init__(self, sim, pid):
        self._sim = sim
        self.pid = pid

    @property
    def oracle(self):
        return self._sim.oracle

    def send(self, to: str, msg: Msg) -> None:
        self._sim._send(self.pid, to, msg)

    def requeue(self, frm: str, msg: Msg) -> None:
        """Locally redeliver a buffered message, keeping its original sender."""
        self._sim._requeue(frm, self.pid, msg)

    def upcall(self, desc: str, detail: dict | None = None) -> None:
        self._sim.trace_aux("upcall", self.pid, desc, detail)

    def fact(self, name: str) -> None:
        self._sim.note_fact(name)


class AdvApi:
    """Adversary handle: may act as any corrupted process, nothing more."""

    __slots__ = ("_sim",)

    def __init__(self, sim):
        self._sim = sim

    @property
    def oracle(self):
        return self._sim.oracle

    def send(self, frm: str, to: str, msg: Msg) -> None:
        if self._sim.status(frm) != BYZANTINE:
            raise ValueError(f"adversary cannot send as non-corrupted {frm}")
        self._sim._send(frm, to, msg)

    def state(self, pid: str):
        return self._sim._procs[pid].automaton

    def trace(self, desc: str, detail: dict | None = None) -> None:
        self._sim.trace_aux("adversary", "-", desc, detail)

    def fact(self, name: str) -> None:
        self._sim.note_fact(name)


class Simulator:
    def __init__(self, seed: int, oracle, trace: list | None = None):
        self.seed = seed
        self.oracle = oracle
        self.rng = random.Random(seed)
        self._procs: dict[str, _Proc] = {}
        self.pending: list[Event] = []
        self.holds: list[HoldRule] = []
        self.externals: list[_External] = []
        self.facts: dict[str, int] = {}
        self.trace = trace if trace is not None else []
        self.next_step = 0
        self.latencies: list[int] = []
        self.metrics = {"sent": 0, "delivered": 0, "dropped_halted": 0, "held": 0, "requeued": 0}
        self.adv_api = AdvApi(self)

    # -- construction -----------------------------------------------------

    def spawn(self, pid: str, automaton) -> None:
        if pid in self._procs:
            raise ValueError(f"duplicate process id {pid}")
        api = Api(self, pid)
        self._procs[pid] = _Proc(automaton, api)
        self.oracle.register(pid)
        automaton.bind(api)

    def roster(self) -> list[str]:
        return sorted(self._procs)

    def api(self, pid: str) -> Api:
        return self._procs[pid].api

    def automaton(self, pid: str):
        return self._procs[pid].automaton

    def add_external(self, trigger: Trigger, kind: str, fire, to: str = "-", desc: str = "", detail: dict | None = None) -> None:
        self.externals.append(_External(trigger, kind, fire, to, desc, detail))

    def add_hold(self, rule: HoldRule) -> None:
        self.holds.append(rule)

    # -- status -----------------------------------------------------------

    def status(self, pid: str) -> str:
        return self._procs[pid].status

    def statuses(self) -> dict[str, str]:
        return {p: r.status for p, r in sorted(self._procs.items())}

    def corrupt(self, pid: str, script) -> None:
        proc = self._procs[pid]
        if proc.status not in (CORRECT, HALTED):
            raise ValueError(f"cannot corrupt {pid} while {proc.status}")
        proc.status = BYZANTINE
        proc.script = script

    def halt(self, pid: str) -> None:
        proc = self._procs[pid]
        if proc.status != CORRECT:
            raise ValueError(f"cannot halt {pid} while {proc.status}")
        proc.status = HALTED
        self.pending = [e for e in self.pending if e.to != pid]
        for rule in self.holds:
            rule.buffer = [e for e in rule.buffer if e[1] != pid]

    def note_fact(self, name: str) -> None:
        self.facts.setdefault(name, self.next_step)

    def now(self) -> int:
        return self.next_step

    # -- messaging --------------------------------------------------------

    def _send(self, frm: str, to: str, msg: Msg) -> None:
        if to not in self._procs:
            raise ValueError(f"unknown destination {to}")
        self.metrics["sent"] += 1
        if self._procs[to].status == HALTED:
            self.metrics["dropped_halted"] += 1
            return
        for rule in self.holds:
            if rule.matches(frm, to, msg):
                rule.buffer.append((frm, to, msg))
                self.metrics["held"] += 1
                return
        self.pending.append(Event(self.next_step, frm, to, msg))

    def _requeue(self, frm: str, to: str, msg: Msg) -> None:
        # holds were already applied on first receipt
        self.metrics["requeued"] += 1
        self.pending.append(Event(self.next_step, frm, to, msg))

    # -- tracing ----------------------------------------------------------

    def _trace(self, kind, frm, to, desc, mhash, detail=None):
        line = {
            "step": self.next_step,
            "kind": kind,
            "frm": frm,
            "to": to,
            "desc": desc,
            "hash": mhash,
            "st": (self._st(frm) + self._st(to)),
        }
        if detail is not None:
            line["detail"] = detail
        self.trace.append(line)

    def trace_aux(self, kind, pid, desc, detail=None):
        self._trace(kind, pid, pid, desc, None, detail)

    def _st(self, pid):
        proc = self._procs.get(pid)
        return proc.status if proc else "-"

    # -- the loop ---------------------------------------------------------

    def _release(self, rule: HoldRule) -> str:
        events = rule.buffer
        rule.buffer = []
        rule.released = True
        for frm, to, msg in events:
            self.pending.append(Event(self.next_step, frm, to, msg))
        self._trace("adversary", "-", "-", "hold.release", None, {"released": len(events), "desc": rule.desc})
        self.next_step += 1
        return "adversary"

    def _fire(self, ext: _External) -> str:
        ext.done = True
        self._trace(ext.kind, "-", ext.to, ext.desc, None, ext.detail)
        if ext.kind == "invoke" and ext.to in self._procs:
            proc = self._procs[ext.to]
            if proc.status == IDLE:
                proc.status = CORRECT
        ext.fire()
        self.next_step += 1
        return ext.kind

    def _deliver(self) -> str:
        base = self.next_step
        acc = []
        total = 0
        for ev in self.pending:
            total += 1 + (base - ev.enq)
            acc.append(total)
        idx = bisect.bisect_right(acc, self.rng.randrange(total))
        ev = self.pending.pop(idx)
        self.latencies.append(base - ev.enq)
        self.metrics["delivered"] += 1
        proc = self._procs[ev.to]
        self._trace("deliver", ev.frm, ev.to, ev.msg.desc, ev.msg.mhash())
        if proc.status == BYZANTINE:
            if proc.script is not None:
                proc.script(self.adv_api, ev)
        else:
            if proc.status == IDLE:
                proc.status = CORRECT
            proc.automaton.on_deliver(ev.frm, ev.msg)
        self.next_step += 1
        return "deliver"

    def step(self) -> str | None:
        for rule in self.holds:
            if rule.buffer and rule.until is not None and rule.until.ready(self):
                return self._release(rule)
        for ext in self.externals:
            if not ext.done and ext.trigger.ready(self):
                return self._fire(ext)
        if self.pending:
            return self._deliver()
        # idle network: fast-fire the earliest pending bound
        for ext in self.externals:
            if not ext.done and ext.trigger.eventually(self):
                return self._fire(ext)
        for rule in self.holds:
            if rule.buffer and rule.until is not None and rule.until.eventually(self):
                return self._release(rule)
        return None

    def run(self, max_steps: int = DEFAULT_STEP_CAP) -> dict:
        while self.next_step < max_steps:
            if self.step() is None:
                leftovers = (
                    self.pending
                    or any(not e.done for e in self.externals)
                    or any(r.buffer for r in self.holds)
                )
                verdict = "stalled" if leftovers else "quiescent"
                return {"verdict": verdict, "steps": self.next_step}
        return {"verdict": "cap", "steps": self.next_step}


def trace_hash(trace: list[dict]) -> str:
    out = hashlib.sha256()
    for line in trace:
        out.update(json.dumps(line, sort_keys=True, separators=(",", ":")).encode())
        out.update(b"\n")
    return out.hexdigest()
