"""Scheduler determinism, status transitions, fairness, quiescence."""

import pytest

from dynbla.fscrypto import LedgerFsOracle
from dynbla.simnet import DEFAULT_STEP_CAP, HoldRule, Msg, Simulator, Trigger, trace_hash


class Echo:
    """Replies to every ping with a pong to the sender."""

    def bind(self, api):
        self.api = api

    def on_deliver(self, frm, msg):
        if msg.desc == "t.ping":
            self.api.send(frm, Msg("t.pong", "t", {"n": msg.body["n"]}))


class Collector:
    def bind(self, api):
        self.api = api
        self.got = []

    def on_deliver(self, frm, msg):
        self.got.append((frm, msg.desc, msg.body.get("n")))


class Flood:
    """Keeps count messages in flight to itself."""

    def __init__(self, rounds):
        self.rounds = rounds

    def bind(self, api):
        self.api = api

    def kick(self):
        self.api.send(self.api.pid, Msg("t.self", "t", {"i": 0}))

    def on_deliver(self, frm, msg):
        i = msg.body["i"]
        if i < self.rounds:
            self.api.send(self.api.pid, Msg("t.self", "t", {"i": i + 1}))


def build(seed, n_pings=6):
    sim = Simulator(seed, LedgerFsOracle())
    a, b = Collector(), Echo()
    sim.spawn("a", a)
    sim.spawn("b", b)
    for i in range(n_pings):
        sim.add_external(
            Trigger(at=0),
            "invoke",
            lambda i=i: sim.api("a").send("b", Msg("t.ping", "t", {"n": i})),
            to="a",
            desc=f"ping{i}",
        )
    return sim, a


def test_same_seed_same_trace():
    s1, _ = build(7)
    s2, _ = build(7)
    assert s1.run(1000)["verdict"] == "quiescent"
    assert s2.run(1000)["verdict"] == "quiescent"
    assert s1.trace == s2.trace
    assert trace_hash(s1.trace) == trace_hash(s2.trace)


def test_different_seeds_reorder_but_same_multiset():
    s1, a1 = build(1)
    s2, a2 = build(2)
    s1.run(1000)
    s2.run(1000)
    assert a1.got != a2.got
    assert sorted(a1.got) == sorted(a2.got)


def test_steps_are_dense_from_zero():
    sim, _ = build(3)
    sim.run(1000)
    primary = [ln for ln in sim.trace if ln["kind"] in ("deliver", "invoke", "adversary")]
    assert [ln["step"] for ln in primary] == list(range(len(primary)))


def test_status_transitions():
    sim = Simulator(0, LedgerFsOracle())
    sim.spawn("p", Collector())
    sim.spawn("q", Collector())
    with pytest.raises(ValueError):
        sim.corrupt("p", lambda api, ev: None)  # idle cannot turn byzantine
    sim.api("p").send("q", Msg("t.x", "t", {}))
    sim.run(10)
    assert sim.status("q") == "C"
    sim.halt("q")
    assert sim.status("q") == "H"
    with pytest.raises(ValueError):
        sim.halt("q")
    sim.corrupt("q", lambda api, ev: None)
    assert sim.status("q") == "B"
    with pytest.raises(ValueError):
        sim.halt("q")


def test_halted_processes_receive_nothing():
    sim = Simulator(0, LedgerFsOracle())
    c = Collector()
    sim.spawn("a", Collector())
    sim.spawn("h", c)
    sim.api("a").send("h", Msg("t.x", "t", {}))
    sim.run(5)
    sim.halt("h")
    sim.api("a").send("h", Msg("t.y", "t", {}))
    sim.run(10)
    assert [d for (_, d, _) in c.got] == ["t.x"]


def test_byzantine_script_gets_deliveries_and_cannot_spoof():
    sim = Simulator(0, LedgerFsOracle())
    seen = []

    def script(api, ev):
        seen.append(ev.msg.desc)
        api.send("b", "v", Msg("t.fake", "t", {}))
        with pytest.raises(ValueError):
            api.send("v", "v", Msg("t.spoof", "t", {}))

    v = Collector()
    sim.spawn("a", Collector())
    sim.spawn("b", Collector())
    sim.spawn("v", v)
    sim.api("a").send("b", Msg("t.poke", "t", {}))
    sim.run(5)
    sim.corrupt("b", script)
    sim.api("a").send("b", Msg("t.poke2", "t", {}))
    sim.run(20)
    assert seen == ["t.poke2"]
    assert [(f, d) for (f, d, _) in v.got] == [("b", "t.fake")]


def test_trigger_is_a_not_before_bound_under_traffic():
    sim = Simulator(5, LedgerFsOracle())
    f = Flood(rounds=50)
    sim.spawn("f", f)
    sim.spawn("a", Collector())
    fired = []
    sim.add_external(Trigger(at=20), "invoke", lambda: fired.append(sim.now()), to="a", desc="op")
    f.kick()
    sim.run(1000)
    assert fired == [20]


def test_trigger_fast_fires_when_idle():
    sim = Simulator(5, LedgerFsOracle())
    sim.spawn("a", Collector())
    fired = []
    sim.add_external(Trigger(at=500), "invoke", lambda: fired.append(sim.now()), to="a", desc="op")
    out = sim.run(1000)
    assert fired == [0]
    assert out["verdict"] == "quiescent"


def test_fact_trigger_with_offset():
    sim = Simulator(5, LedgerFsOracle())
    f = Flood(rounds=80)
    sim.spawn("f", f)
    fired = []
    sim.add_external(Trigger(fact="go", offset=7), "invoke", lambda: fired.append(sim.now()), to="f", desc="op")
    f.kick()
    sim.add_external(Trigger(at=10), "invoke", lambda: sim.note_fact("go"), to="f", desc="noter")
    sim.run(1000)
    assert fired == [17]


def test_unreachable_fact_trigger_stalls():
    sim = Simulator(5, LedgerFsOracle())
    sim.spawn("a", Collector())
    sim.add_external(Trigger(fact="never"), "invoke", lambda: None, to="a", desc="op")
    out = sim.run(1000)
    assert out["verdict"] == "stalled"


def test_cap_verdict():
    sim = Simulator(5, LedgerFsOracle())
    f = Flood(rounds=10**9)
    sim.spawn("f", f)
    f.kick()
    out = sim.run(200)
    assert out["verdict"] == "cap"
    assert DEFAULT_STEP_CAP == 200_000


def test_age_boost_bounds_latency():
    # one early message competes with a sustained self-flood; the age boost
    # must deliver it within a small multiple of the queue size
    sim = Simulator(11, LedgerFsOracle())
    f = Flood(rounds=400)
    c = Collector()
    sim.spawn("f", f)
    sim.spawn("c", c)
    f.kick()
    sim.api("f").send("c", Msg("t.early", "t", {}))
    sim.run(2000)
    assert c.got
    assert max(sim.latencies) <= 10 * 2


def test_holds_divert_until_released():
    sim = Simulator(3, LedgerFsOracle())
    c = Collector()
    sim.spawn("a", Collector())
    sim.spawn("c", c)
    sim.add_hold(HoldRule(frm={"a"}, to={"c"}, desc="t.h", until=Trigger(fact="open")))
    sim.api("a").send("c", Msg("t.h", "t", {"n": 1}))
    sim.api("a").send("c", Msg("t.free", "t", {}))
    sim.run(50)
    assert [d for (_, d, _) in c.got] == ["t.free"]
    sim.note_fact("open")
    sim.run(50)
    assert [d for (_, d, _) in c.got] == ["t.free", "t.h"]
