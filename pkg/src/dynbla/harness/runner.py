"""Builds a live world from a scenario and runs it to a verdict.

The runner owns the mapping from scenario dicts to automata: one replica
group named "g", an optional application object "g/obj", an optional
access-control object "g/acl", one hub per client.  Every operation
return and every install is written into the trace with a jsonable
detail, so all invariants can be re-checked from the trace file alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import SimpleNamespace

from ..access_control import AcClient, AcStore, AccessControl, make_ac_input_check, make_admin_cert
from ..dbla import DblaClient, DblaStore, DynamicObject, accept_all
from ..fscrypto import KeyChainFsOracle, LedgerFsOracle
from ..lattice import ADD, REMOVE, Config, FinSet, genesis_config, value_to_jsonable
from ..maxreg import MaxRegClient, MaxRegStore
from ..reconfig import ReconfigClient, ReconfigGroup
from ..simnet import HoldRule, Simulator, trace_hash
from .attacks import SCRIPTS
from .scenario import ScenarioError, parse_trigger, validate

GROUP = "g"
APP_OBJ = GROUP + "/obj"
ACL_OBJ = GROUP + "/acl"
TRACE_FORMAT = "dynbla-trace"


@dataclass
class OpRecord:
    idx: int
    spec: dict
    invoked_at: int | None = None
    returned_at: int | None = None
    result: dict | None = None


@dataclass
class RunReport:
    scenario: dict
    seed: int
    verdict: str
    steps: int
    trace: list
    ops: list
    finals: dict
    statuses: dict
    metrics: dict
    facts: dict
    ledger: list
    corruptions: list
    hash: str
    ctx: object = field(repr=False, default=None)

    def bundle(self) -> dict:
        """Everything the offline checks need, as one jsonable dict."""
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "verdict": self.verdict,
            "steps": self.steps,
            "trace": self.trace,
            "final": {
                **self.finals,
                "statuses": self.statuses,
                "metrics": self.metrics,
                "facts": self.facts,
                "corruptions": self.corruptions,
            },
            "ledger": self.ledger,
            "hash": self.hash,
        }


def build_world(scn) -> SimpleNamespace:
    ctx = SimpleNamespace()
    ctx.scenario = scn
    ctx.oracle = LedgerFsOracle() if scn["oracle"] == "ledger" else KeyChainFsOracle()
    ctx.sim = Simulator(scn["seed"], ctx.oracle)
    ctx.oracle.audit_hook = lambda: {"step": ctx.sim.next_step}
    ctx.genesis = genesis_config(scn["genesis"])

    ctx.acl_mode = scn["acl"]["mode"]
    ctx.ac = None
    conf_check = None
    if ctx.acl_mode != "none":
        ctx.ac = AccessControl(ACL_OBJ, ctx.acl_mode, admins=scn["acl"].get("admins", ()))
        conf_check = make_ac_input_check(ctx.ac, ctx.oracle)
    ctx.grp = ReconfigGroup(GROUP, ctx.genesis, ctx.oracle, conf_input_check=conf_check)

    ctx.app_kind = scn["app"]["kind"]
    ctx.app_obj = None
    if ctx.app_kind == "dbla":
        ctx.app_obj = DynamicObject(APP_OBJ, ctx.genesis, check_value=accept_all)
        ctx.grp.govern(ctx.app_obj)

    rids = list(scn["genesis"]) + list(scn["extra_replicas"])
    ctx.roster = rids + list(scn["clients"])
    hook = _make_install_hook(ctx, rids)
    ctx.replicas = {}
    for r in rids:
        extra = []
        if ctx.app_kind == "dbla":
            extra.append(DblaStore("obj", ctx.app_obj))
        elif ctx.app_kind == "maxreg":
            extra.append(MaxRegStore("obj", APP_OBJ, accept_all))
        if ctx.ac is not None and ctx.acl_mode != "admin":
            extra.append(AcStore("acl", ctx.ac))
        rep = ctx.grp.make_replica(ctx.roster, extra_stores=extra)
        rep.install_hook = hook
        ctx.replicas[r] = rep
        ctx.sim.spawn(r, rep)

    ctx.hubs, ctx.rcs, ctx.apps, ctx.acls = {}, {}, {}, {}
    for c in scn["clients"]:
        hub = ctx.grp.make_hub(ctx.roster)
        ctx.hubs[c] = hub
        ctx.rcs[c] = ReconfigClient(hub, ctx.grp)
        if ctx.app_kind == "dbla":
            ctx.apps[c] = DblaClient(hub, ctx.app_obj)
        elif ctx.app_kind == "maxreg":
            ctx.apps[c] = MaxRegClient(hub, APP_OBJ, accept_all)
        if ctx.ac is not None and ctx.acl_mode != "admin":
            ctx.acls[c] = AcClient(hub, ctx.ac)
        ctx.sim.spawn(c, hub)
    return ctx


def _make_install_hook(ctx, rids):
    # Snapshot key watermarks and statuses at the moment of each install;
    # the key-update audit replays these offline.
    def hook(core, config):
        return {
            "st": {p: ctx.oracle.st(p) for p in rids},
            "status": {p: ctx.sim.status(p) for p in rids},
            "hist": [
                {"cid": c.cid(), "h": c.height(), "replicas": sorted(c.replicas())}
                for c in core.history.configs
            ],
        }

    return hook


def _ack_jsonable(ack):
    if ack is None:
        return None
    return {
        "cid": ack["cid"],
        "h": ack["h"],
        "v": ack["v"],
        "cfg": value_to_jsonable(ack["config"]),
        "acks": {p: s.to_jsonable() for p, s in ack["acks"].items()},
    }


def _make_fire(ctx, idx, spec, rec):
    sim = ctx.sim
    c = spec["client"]
    kind = spec["op"]

    def finish(result):
        rec.returned_at = sim.now()
        rec.result = result
        sim.trace_aux("return", c, f"op{idx}:{kind}", {"idx": idx, "result": result})
        sim.note_fact(f"op{idx}:done")
        sim.note_fact(f"ret:{c}")

    if kind == "propose":
        def fire():
            rec.invoked_at = sim.now()
            def done(w, cert):
                finish({
                    "w": value_to_jsonable(w),
                    "cert": cert.to_jsonable(),
                    "anchor": cert.anchor().cid(),
                    "anchor_h": cert.anchor().height(),
                })
            try:
                ctx.apps[c].propose(FinSet(spec["value"]), {"kind": "any"}, done)
            except RuntimeError:
                finish({"error": "busy"})
        return fire

    if kind == "write":
        def fire():
            rec.invoked_at = sim.now()
            try:
                ctx.apps[c].write(spec["value"], {"kind": "any"},
                                  lambda ack: finish({"ack": _ack_jsonable(ack)}))
            except RuntimeError:
                finish({"error": "busy"})
        return fire

    if kind == "read":
        def fire():
            rec.invoked_at = sim.now()
            try:
                ctx.apps[c].read(lambda v, ack: finish({"v": v, "ack": _ack_jsonable(ack)}))
            except RuntimeError:
                finish({"error": "busy"})
        return fire

    if kind == "update_config":
        def fire():
            rec.invoked_at = sim.now()
            ups = [(ADD, r) for r in spec.get("add", [])]
            ups += [(REMOVE, r) for r in spec.get("remove", [])]
            target = ctx.hubs[c].anchor().join(Config(ups))
            def done(h, th):
                finish({
                    "hist": h.to_jsonable(),
                    "cert": th.to_jsonable(),
                    "target": target.cid(),
                    "target_h": target.height(),
                })
            try:
                if ctx.acl_mode == "none":
                    ctx.rcs[c].update_config(target, {"kind": "any"}, done)
                elif ctx.acl_mode == "admin":
                    signers = sorted(ctx.ac.admins)[: ctx.ac.admin_threshold()]
                    cert = make_admin_cert(ctx.oracle, ctx.ac, f"h{target.height()}", target, signers)
                    ctx.rcs[c].update_config(target, cert.to_jsonable(), done)
                else:
                    def got(cert):
                        if cert is None:
                            finish({"denied": True, "target": target.cid()})
                        else:
                            ctx.rcs[c].update_config(target, cert.to_jsonable(), done)
                    ctx.acls[c].request(f"next:{target.cid()}", target, got)
            except RuntimeError:
                finish({"error": "busy"})
        return fire

    if kind == "ac_request":
        def fire():
            rec.invoked_at = sim.now()
            def done(cert):
                finish({
                    "granted": cert is not None,
                    "cert": cert.to_jsonable() if cert is not None else None,
                    "slot": spec["slot"],
                    "value": spec["value"],
                })
            try:
                ctx.acls[c].request(spec["slot"], spec["value"], done)
            except RuntimeError:
                finish({"error": "busy"})
        return fire

    raise ScenarioError(f"unhandled op kind {kind!r}")


def _schedule(ctx, scn, records, corruptions):
    for idx, spec in enumerate(scn["ops"]):
        rec = OpRecord(idx, spec)
        records.append(rec)
        detail = {"idx": idx, **{k: v for k, v in spec.items()
                                 if k not in ("at", "after", "offset")}}
        ctx.sim.add_external(parse_trigger(spec), "invoke", _make_fire(ctx, idx, spec, rec),
                             to=spec["client"], desc=f"op{idx}:{spec['op']}", detail=detail)

    for ent in scn["adversary"]["corruptions"]:
        name = ent["script"]
        if name not in SCRIPTS:
            raise ScenarioError(f"unknown adversary script {name!r}")
        pid = ent["pid"]

        def fire(pid=pid, name=name):
            try:
                ctx.sim.corrupt(pid, SCRIPTS[name](ctx))
                corruptions.append({"pid": pid, "script": name,
                                    "step": ctx.sim.now(), "applied": True})
            except ValueError:
                # never-activated process; a weaker adversary, not an error
                corruptions.append({"pid": pid, "script": name,
                                    "step": ctx.sim.now(), "applied": False})

        ctx.sim.add_external(parse_trigger(ent), "adversary", fire,
                             to=pid, desc=f"corrupt:{name}")

    for h in scn["adversary"]["holds"]:
        until = h.get("until")
        ctx.sim.add_hold(HoldRule(
            frm=set(h["frm"]) if h.get("frm") else None,
            to=set(h["to"]) if h.get("to") else None,
            desc=h.get("desc", ""),
            until=None if until is None else parse_trigger(until),
        ))


def _finals(ctx):
    reps = {}
    for pid, rep in ctx.replicas.items():
        reps[pid] = {
            "history": [c.cid() for c in rep.history.configs],
            "heights": [c.height() for c in rep.history.configs],
            "ccurr": rep.ccurr.cid(),
            "cinst": rep.cinst.cid(),
            "chighest": rep.chighest().cid(),
            "member": pid in rep.chighest().replicas(),
            "installed": sorted(c.cid() for c in rep.installed),
            "xfer_targets": sorted(rep.xfer_targets_sent),
            "buffered": len(rep.buffered),
            "dropped": rep.dropped,
        }
    targets = set()
    for r in reps.values():
        targets.update(r["xfer_targets"])
    hubs = {c: {"anchor_h": hub.anchor().height()} for c, hub in ctx.hubs.items()}
    return {"replicas": reps, "hubs": hubs, "xfer_targets": sorted(targets)}


def run_scenario(scn, seed=None) -> RunReport:
    scn = validate(scn)
    if seed is not None:
        scn = dict(scn)
        scn["seed"] = seed
    ctx = build_world(scn)
    records: list[OpRecord] = []
    corruptions: list[dict] = []
    _schedule(ctx, scn, records, corruptions)
    res = ctx.sim.run(scn["max_steps"])
    finals = _finals(ctx)
    return RunReport(
        scenario=scn,
        seed=scn["seed"],
        verdict=res["verdict"],
        steps=res["steps"],
        trace=ctx.sim.trace,
        ops=records,
        finals=finals,
        statuses=ctx.sim.statuses(),
        metrics=dict(ctx.sim.metrics),
        facts=dict(ctx.sim.facts),
        ledger=ctx.oracle.dump_ledger(),
        corruptions=corruptions,
        hash=trace_hash(ctx.sim.trace),
        ctx=ctx,
    )


# -- trace files ---------------------------------------------------------------

def save_trace(path, bundle) -> None:
    """One JSON object per line: head, events, final, ledger, hash."""
    with open(path, "w") as f:
        head = {"t": "head", "format": TRACE_FORMAT, "version": 1,
                "scenario": bundle["scenario"], "seed": bundle["seed"],
                "verdict": bundle["verdict"], "steps": bundle["steps"]}
        f.write(json.dumps(head, sort_keys=True) + "\n")
        for line in bundle["trace"]:
            f.write(json.dumps({"t": "ev", **line}, sort_keys=True) + "\n")
        f.write(json.dumps({"t": "final", **bundle["final"]}, sort_keys=True) + "\n")
        f.write(json.dumps({"t": "ledger", "entries": bundle["ledger"]}, sort_keys=True) + "\n")
        f.write(json.dumps({"t": "hash", "hash": bundle["hash"]}, sort_keys=True) + "\n")


def load_trace(path) -> dict:
    bundle = {"trace": []}
    with open(path) as f:
        for raw in f:
            raw = raw.strip()
            if not raw:
                continue
            line = json.loads(raw)
            t = line.pop("t", None)
            if t == "head":
                bundle["scenario"] = line["scenario"]
                bundle["seed"] = line["seed"]
                bundle["verdict"] = line["verdict"]
                bundle["steps"] = line["steps"]
            elif t == "ev":
                bundle["trace"].append(line)
            elif t == "final":
                bundle["final"] = line
            elif t == "ledger":
                bundle["ledger"] = line["entries"]
            elif t == "hash":
                bundle["hash"] = line["hash"]
    missing = {"scenario", "final", "ledger", "hash"} - bundle.keys()
    if missing:
        raise ValueError(f"trace file is missing sections: {sorted(missing)}")
    return bundle
