import pytest

from dynbla.dbla import (
    ClientHub,
    DblaClient,
    DblaStore,
    DynamicObject,
    DynamicReplica,
    InputValue,
    OutputCert,
    accept_all,
    check_authority_history,
    check_plain_input,
    join_values,
    make_authority_history_cert,
    make_plain_input_cert,
    verify_output,
)
from dynbla.fscrypto import FsSig, LedgerFsOracle, LedgerVerifier
from dynbla.lattice import ADD, Config, FinSet, History, genesis_config
from dynbla.simnet import HoldRule, Msg, Simulator, Trigger, trace_hash


class Probe:
    """Bare automaton for poking replicas with raw messages."""

    def __init__(self):
        self.got = []

    def bind(self, api):
        self.api = api

    def on_deliver(self, frm, msg):
        self.got.append((frm, msg))


class World:
    def __init__(self, seed=7, rids=("r1", "r2", "r3", "r4"), cids=("p",), genesis_rids=None, check_value=None):
        self.oracle = LedgerFsOracle()
        self.sim = Simulator(seed, self.oracle)
        self.genesis = genesis_config(genesis_rids or rids)
        self.obj = DynamicObject("obj", self.genesis, check_value=check_value or accept_all)
        self.obj.set_check_history(check_authority_history(self.oracle, "grp"))
        roster = list(rids) + list(cids)
        self.replicas = {}
        for r in rids:
            rep = DynamicReplica("grp", self.genesis, [DblaStore("la", self.obj)], self.obj.check_history, roster)
            self.replicas[r] = rep
            self.sim.spawn(r, rep)
        self.hubs = {}
        self.clients = {}
        for c in cids:
            hub = ClientHub("grp", self.obj, roster)
            self.hubs[c] = hub
            self.clients[c] = DblaClient(hub, self.obj)
            self.sim.spawn(c, hub)
        self.returns = {}

    def propose(self, trigger, cid, value, cert=None):
        cert = {"kind": "any"} if cert is None else cert

        def fire():
            def done(w, oc):
                self.returns.setdefault(cid, []).append((w, oc))
                self.sim.note_fact(f"ret:{cid}")

            self.clients[cid].propose(value, cert, done)

        self.sim.add_external(trigger, "invoke", fire, to=cid, desc="propose")

    def update_history(self, trigger, cid, hist):
        cert = make_authority_history_cert(self.oracle, "grp", hist)

        def fire():
            self.hubs[cid].update_history(hist, cert, done=lambda: self.sim.note_fact(f"uret:{cid}"))

        self.sim.add_external(trigger, "invoke", fire, to=cid, desc="update_history")

    def grown(self, *more):
        updates = set(self.genesis.updates)
        for r in more:
            updates.add((ADD, r))
        return Config(updates)


def test_single_propose_returns_verifiable_join():
    w = World(cids=("p",))
    val = FinSet({"a"})
    w.propose(Trigger(at=0), "p", val)
    res = w.sim.run()
    assert res["verdict"] == "quiescent"
    out, cert = w.returns["p"][0]
    assert out == val
    assert cert.anchor() == w.genesis
    assert verify_output(w.obj, w.oracle, out, cert)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5, 6, 7, 8])
def test_concurrent_outputs_comparable_and_inclusive(seed):
    cids = tuple(f"p{i}" for i in range(1, 6))
    w = World(seed=seed, cids=cids)
    mine = {}
    for i, c in enumerate(cids):
        mine[c] = FinSet({f"x{i}"})
        w.propose(Trigger(at=0), c, mine[c])
    assert w.sim.run()["verdict"] == "quiescent"
    outs = {}
    for c in cids:
        out, cert = w.returns[c][0]
        assert mine[c].leq(out)
        assert verify_output(w.obj, w.oracle, out, cert)
        outs[c] = out
    vals = list(outs.values())
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            assert vals[i].leq(vals[j]) or vals[j].leq(vals[i])


def test_verify_output_rejects_tampering():
    w = World(cids=("p",))
    w.propose(Trigger(at=0), "p", FinSet({"a"}))
    w.sim.run()
    out, cert = w.returns["p"][0]
    assert verify_output(w.obj, w.oracle, out, cert)

    assert not verify_output(w.obj, w.oracle, FinSet({"a", "zz"}), cert)

    short = dict(cert.cacks)
    short.pop(sorted(short)[0])
    assert not verify_output(
        w.obj, w.oracle, out, OutputCert(cert.values, cert.history, cert.hist_cert, cert.packs, short)
    )

    swapped = dict(cert.packs)
    pids = sorted(swapped)
    swapped[pids[0]] = FsSig(pids[0], 0, b"\x00" * 16)
    assert not verify_output(
        w.obj, w.oracle, out, OutputCert(cert.values, cert.history, cert.hist_cert, swapped, cert.cacks)
    )

    fake_hist = History([w.genesis, w.grown("r9")])
    assert not verify_output(
        w.obj, w.oracle, out, OutputCert(cert.values, fake_hist, cert.hist_cert, cert.packs, cert.cacks)
    )

    extra = list(cert.values) + [InputValue(FinSet({"zz"}), {"kind": "any"})]
    assert not verify_output(
        w.obj, w.oracle, FinSet({"a", "zz"}), OutputCert(extra, cert.history, cert.hist_cert, cert.packs, cert.cacks)
    )

    assert not verify_output(w.obj, w.oracle, out, {"not": "a cert"})


def test_output_cert_jsonable_round_trip():
    w = World(cids=("p",))
    w.propose(Trigger(at=0), "p", FinSet({"a"}))
    w.sim.run()
    out, cert = w.returns["p"][0]
    back = OutputCert.from_jsonable(cert.to_jsonable())
    assert back.canon() == cert.canon()
    assert verify_output(w.obj, w.oracle, out, back)


def test_reconfig_transfer_carries_values_and_updates_keys():
    rids = ("r1", "r2", "r3", "r4", "r5")
    w = World(seed=13, rids=rids, cids=("p", "q", "u"), genesis_rids=rids[:4])
    c1 = w.grown("r5")
    h1 = History([w.genesis, c1])

    w.propose(Trigger(at=0), "p", FinSet({"a"}))
    w.update_history(Trigger(fact="ret:p", offset=1), "u", h1)
    w.propose(Trigger(fact=f"inst:h{c1.height()}", offset=5), "q", FinSet({"b"}))

    res = w.sim.run()
    assert res["verdict"] == "quiescent"

    for r in rids:
        rep = w.replicas[r]
        assert rep.history == h1
        assert rep.ccurr == c1 and rep.cinst == c1
        assert c1 in rep.installed
        assert w.oracle.st(r) == c1.height()
        # watermark forbids signing for the superseded configuration
        assert w.oracle.fs_sign(r, b"late", w.genesis.height()) is None

    out_q, cert_q = w.returns["q"][0]
    assert FinSet({"a", "b"}).leq(out_q)
    assert cert_q.anchor() == c1
    assert verify_output(w.obj, w.oracle, out_q, cert_q)

    # transferred value set reached the joining replica
    assert any(iv.value == FinSet({"a"}) for iv in w.replicas["r5"].stores[0].vals.values())


def test_client_blind_to_new_history_restarts_after_release():
    rids = ("r1", "r2", "r3", "r4", "r5")
    w = World(seed=5, rids=rids, cids=("q", "u"), genesis_rids=rids[:4])
    c1 = w.grown("r5")
    h1 = History([w.genesis, c1])

    w.sim.add_hold(HoldRule(to={"q"}, desc="rb.fwd", until=Trigger(fact=f"inst:h{c1.height()}", offset=30)))
    w.update_history(Trigger(at=0), "u", h1)
    w.propose(Trigger(fact=f"inst:h{c1.height()}", offset=2), "q", FinSet({"b"}))

    res = w.sim.run()
    assert res["verdict"] == "quiescent"
    out, cert = w.returns["q"][0]
    assert cert.anchor() == c1
    assert w.clients["q"].restarts >= 1
    assert any(rep.dropped > 0 for rep in w.replicas.values())
    assert verify_output(w.obj, w.oracle, out, cert)


def test_xfer_read_buffered_until_target_is_superseded():
    rids = ("r1", "r2", "r3", "r4", "r5")
    w = World(seed=3, rids=rids, cids=("u",), genesis_rids=rids[:4])
    probe = Probe()
    w.sim.spawn("z", probe)
    c1 = w.grown("r5")
    h1 = History([w.genesis, c1])

    w.sim.add_external(
        Trigger(at=0),
        "invoke",
        lambda: probe.api.send("r1", Msg("xfer.read", "grp", {"sn": 9, "config": w.genesis})),
        to="z",
        desc="probe",
    )
    w.sim.run(max_steps=4)
    assert probe.got == []
    assert any(m.desc == "xfer.read" for _, m in w.replicas["r1"].buffered)

    w.update_history(Trigger(at=4), "u", h1)
    assert w.sim.run()["verdict"] == "quiescent"
    resp = [m for _, m in probe.got if m.desc == "xfer.resp"]
    assert resp and resp[0].body["sn"] == 9


def test_install_upcall_once_per_replica():
    rids = ("r1", "r2", "r3", "r4", "r5")
    w = World(seed=2, rids=rids, cids=("u",), genesis_rids=rids[:4])
    c1 = w.grown("r5")
    w.update_history(Trigger(at=0), "u", History([w.genesis, c1]))
    assert w.sim.run()["verdict"] == "quiescent"
    installs = [l for l in w.sim.trace if l["kind"] == "upcall" and l["desc"] == "install"]
    assert sorted(l["to"] for l in installs) == sorted(rids)
    assert all(l["detail"]["h"] == c1.height() for l in installs)


def test_byzantine_replica_garbage_is_ignored():
    w = World(seed=9, cids=("p",), check_value=None)
    w.obj.set_check_value(check_plain_input(w.oracle, "obj"))
    good = make_plain_input_cert(w.oracle, "obj", "p", FinSet({"a"}))

    def evil(adv, ev):
        if ev.msg.desc == "bla.propose":
            bogus = InputValue(FinSet({"zz"}), {"kind": "plain", "signer": "p", "sig": "00"})
            adv.send(
                "r4",
                ev.frm,
                Msg(
                    "bla.presp",
                    "obj",
                    {"values": [bogus], "sig": FsSig("r4", 0, b"\x00" * 8), "sn": ev.msg.body["sn"]},
                ),
            )

    probe = Probe()
    w.sim.spawn("z", probe)
    w.sim.add_external(
        Trigger(at=0), "invoke", lambda: probe.api.send("r4", Msg("kick", "obj", {})), to="z", desc="kick"
    )
    w.sim.add_external(Trigger(at=3), "adversary", lambda: w.sim.corrupt("r4", evil), to="r4", desc="corrupt")
    w.propose(Trigger(at=8), "p", FinSet({"a"}), cert=good)

    assert w.sim.run()["verdict"] == "quiescent"
    out, cert = w.returns["p"][0]
    assert out == FinSet({"a"})
    assert "r4" not in cert.packs
    assert verify_output(w.obj, w.oracle, out, cert)


def test_invalid_input_cert_rejected_at_propose():
    w = World(cids=("p",))
    w.obj.set_check_value(check_plain_input(w.oracle, "obj"))
    with pytest.raises(ValueError):
        w.clients["p"].propose(FinSet({"a"}), {"kind": "plain", "signer": "p", "sig": "00"}, lambda *a: None)


def test_offline_ledger_verifier_accepts_outputs():
    w = World(cids=("p",))
    w.propose(Trigger(at=0), "p", FinSet({"a"}))
    w.sim.run()
    out, cert = w.returns["p"][0]
    offline = LedgerVerifier(w.oracle.dump_ledger())
    assert verify_output(w.obj, offline, out, cert)
    short = dict(cert.cacks)
    short.pop(sorted(short)[0])
    bad = OutputCert(cert.values, cert.history, cert.hist_cert, cert.packs, short)
    assert not verify_output(w.obj, offline, out, bad)


def _run_full_stack(seed):
    rids = ("r1", "r2", "r3", "r4", "r5")
    w = World(seed=seed, rids=rids, cids=("p", "q", "u"), genesis_rids=rids[:4])
    c1 = w.grown("r5")
    w.propose(Trigger(at=0), "p", FinSet({"a"}))
    w.update_history(Trigger(fact="ret:p", offset=1), "u", History([w.genesis, c1]))
    w.propose(Trigger(fact=f"inst:h{c1.height()}", offset=5), "q", FinSet({"b"}))
    w.sim.run()
    return trace_hash(w.sim.trace)


def test_full_stack_deterministic():
    assert _run_full_stack(21) == _run_full_stack(21)
