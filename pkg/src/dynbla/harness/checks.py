"""Invariant checks over a run bundle.

Every check works from the serialized bundle (scenario, trace, finals,
signature ledger) so the same code validates a live run and a trace file
loaded later.  Certificates embedded in operation returns are rebuilt
and re-verified against an offline view of the group, with a
LedgerVerifier standing in for the signature oracle.
"""

from __future__ import annotations

from types import SimpleNamespace

from ..access_control import AcCert, AccessControl, make_ac_input_check, verify_cert
from ..dbla import DynamicObject, OutputCert, accept_all, verify_output
from ..fscrypto import FsSig, LedgerVerifier
from ..lattice import FinSet, genesis_config, quorum_size, value_from_jsonable
from ..maxreg import setresp_payload
from ..reconfig import ReconfigGroup
from .runner import ACL_OBJ, APP_OBJ, GROUP


def rebuild_view(scn, oracle=None, ledger=None):
    """Reconstruct the verification-side objects a run was built from."""
    if oracle is None:
        oracle = LedgerVerifier(ledger or [])
    genesis = genesis_config(scn["genesis"])
    ac = None
    conf_check = None
    if scn["acl"]["mode"] != "none":
        ac = AccessControl(ACL_OBJ, scn["acl"]["mode"], admins=scn["acl"].get("admins", ()))
        conf_check = make_ac_input_check(ac, oracle)
    grp = ReconfigGroup(GROUP, genesis, oracle, conf_input_check=conf_check)
    app_obj = None
    if scn["app"]["kind"] == "dbla":
        app_obj = DynamicObject(APP_OBJ, genesis, check_value=accept_all)
        grp.govern(app_obj)
    return SimpleNamespace(genesis=genesis, grp=grp, app_obj=app_obj, ac=ac, oracle=oracle)


def ops_table(bundle):
    """Pair up op invokes and returns from the trace."""
    table = {}
    for line in bundle["trace"]:
        if line["kind"] == "invoke" and line["desc"].startswith("op"):
            d = line["detail"]
            table[d["idx"]] = {"spec": d, "invoked": line["step"], "returned": None, "result": None}
        elif line["kind"] == "return":
            d = line["detail"]
            row = table.setdefault(d["idx"], {"spec": None, "invoked": None})
            row["returned"] = line["step"]
            row["result"] = d["result"]
    return table


def _installs(bundle):
    return [l for l in bundle["trace"] if l["kind"] == "upcall" and l["desc"] == "install"]


def _has_forever_hold(scn):
    return any(h.get("until") is None for h in scn["adversary"]["holds"])


# -- individual checks ---------------------------------------------------------


def check_liveness(bundle, view):
    table = ops_table(bundle)
    missing = [i for i, row in table.items() if row["returned"] is None]
    busy = [i for i, row in table.items()
            if row["result"] and row["result"].get("error")]
    ok = not missing and not busy
    return ("liveness.all_ops_return", ok,
            f"{len(table)} ops, missing={missing}, errored={busy}")


def check_certificates(bundle, view):
    """Re-verify every certificate embedded in an operation return."""
    table = ops_table(bundle)
    bad = []
    for idx, row in sorted(table.items()):
        r = row["result"]
        spec = row["spec"] or {}
        if not r or r.get("error") or r.get("denied"):
            continue
        kind = spec.get("op")
        try:
            if kind == "propose":
                w = value_from_jsonable(r["w"])
                cert = OutputCert.from_jsonable(r["cert"])
                if not verify_output(view.app_obj, view.oracle, w, cert):
                    bad.append(idx)
            elif kind == "update_config":
                h = value_from_jsonable(r["hist"])
                th = OutputCert.from_jsonable(r["cert"])
                if not view.grp.check_history(h, th):
                    bad.append(idx)
            elif kind in ("write", "read"):
                ack = r.get("ack")
                if ack is None:
                    continue
                cfg = value_from_jsonable(ack["cfg"])
                pl = setresp_payload(APP_OBJ, cfg, ack["v"])
                sigs = {p: FsSig.from_jsonable(s) for p, s in ack["acks"].items()}
                okq = cfg.is_quorum(sigs.keys()) and all(
                    view.oracle.fs_verify(pl, p, s, cfg.height()) for p, s in sigs.items())
                if not okq:
                    bad.append(idx)
            elif kind == "ac_request" and r.get("granted"):
                cert = AcCert.from_jsonable(r["cert"])
                if not verify_cert(view.ac, view.oracle, cert):
                    bad.append(idx)
                elif cert.slot != r["slot"] or cert.value != r["value"]:
                    bad.append(idx)
        except (KeyError, TypeError, ValueError):
            bad.append(idx)
    return ("safety.certificates_verify", not bad, f"failed ops: {bad}")


def check_dbla_outputs(bundle, view):
    """Pairwise comparability of outputs plus each proposer's own inclusion."""
    table = ops_table(bundle)
    outs = []
    bad = []
    for idx, row in sorted(table.items()):
        spec, r = row["spec"] or {}, row["result"]
        if spec.get("op") != "propose" or not r or r.get("error"):
            continue
        w = value_from_jsonable(r["w"])
        if not isinstance(w, FinSet):
            bad.append((idx, "not a set"))
            continue
        if not set(spec.get("value", [])) <= w.elems:
            bad.append((idx, "own value missing"))
        outs.append((idx, w))
    for i in range(len(outs)):
        for j in range(i + 1, len(outs)):
            a, b = outs[i][1], outs[j][1]
            if not (a.elems <= b.elems or b.elems <= a.elems):
                bad.append((outs[i][0], outs[j][0], "incomparable"))
    return ("safety.dbla_outputs", not bad, f"violations: {bad}")


def check_key_update_audit(bundle, view):
    """At every install, superseded configurations must be mostly re-keyed.

    For each configuration strictly below the installed one, at least a
    quorum minus the Byzantine members must have moved their signing
    watermark past that configuration's epoch.
    """
    bad = []
    for line in _installs(bundle):
        d = line["detail"]
        st, status = d["st"], d["status"]
        for cfg in d["hist"]:
            if cfg["h"] >= d["h"]:
                continue
            members = cfg["replicas"]
            byz = sum(1 for r in members if status.get(r) == "B")
            fresh = sum(1 for r in members if st.get(r, 0) > cfg["h"])
            need = quorum_size(len(members)) - byz
            if fresh < need:
                bad.append({"at": line["to"], "step": line["step"], "cfg": cfg["cid"],
                            "fresh": fresh, "need": need})
    return ("safety.key_update_audit", not bad, f"stale epochs: {bad}")


def check_installs(bundle, view):
    """Installed configurations appear in some correct replica's history."""
    finals = bundle["final"]["replicas"]
    statuses = bundle["final"]["statuses"]
    known = set()
    for pid, f in finals.items():
        if statuses.get(pid) in ("C", "I"):
            known.update(f["history"])
    bad = []
    for pid, f in finals.items():
        if statuses.get(pid) != "C":
            continue
        for cid in f["installed"]:
            if cid not in known:
                bad.append((pid, cid))
        if f["cinst"] not in f["history"] or f["ccurr"] not in f["history"]:
            bad.append((pid, "gate out of history"))
    return ("safety.installs_certified", not bad, f"violations: {bad}")


def check_convergence(bundle, view):
    """Correct replicas hold comparable histories; quiet runs agree exactly."""
    finals = bundle["final"]["replicas"]
    statuses = bundle["final"]["statuses"]
    rows = [(p, f) for p, f in sorted(finals.items()) if statuses.get(p) in ("C", "I")]
    bad = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            a, b = set(rows[i][1]["history"]), set(rows[j][1]["history"])
            if not (a <= b or b <= a):
                bad.append((rows[i][0], rows[j][0], "incomparable histories"))
    strict = bundle["verdict"] == "quiescent" and not _has_forever_hold(bundle["scenario"])
    if strict and rows:
        longest = max((f["history"] for _, f in rows), key=len)
        for p, f in rows:
            if statuses.get(p) != "C":
                continue
            if f["history"] != longest:
                bad.append((p, "history not fully adopted"))
            if f["member"] and f["cinst"] != f["chighest"]:
                bad.append((p, "member did not install the top configuration"))
    return ("safety.replica_convergence", not bad, f"violations: {bad}")


def check_maxreg(bundle, view):
    """Atomic register semantics over completed operation intervals."""
    table = ops_table(bundle)
    writes, reads = [], []
    for idx, row in sorted(table.items()):
        spec, r = row["spec"] or {}, row["result"]
        if not r or r.get("error") or row["returned"] is None:
            continue
        if spec.get("op") == "write" and r.get("ack"):
            writes.append({"idx": idx, "v": spec["value"],
                           "inv": row["invoked"], "ret": row["returned"]})
        elif spec.get("op") == "read":
            reads.append({"idx": idx, "v": r.get("v"),
                          "inv": row["invoked"], "ret": row["returned"]})
    bad = []
    vals = {w["v"] for w in writes}
    for r in reads:
        if r["v"] is not None and r["v"] not in vals:
            bad.append((r["idx"], "read invented a value"))
        floor = max((w["v"] for w in writes if w["ret"] < r["inv"]), default=None)
        if floor is not None and (r["v"] is None or r["v"] < floor):
            bad.append((r["idx"], f"read {r['v']} after write {floor} completed"))
    for a in reads:
        for b in reads:
            if a["ret"] < b["inv"] and a["v"] is not None:
                if b["v"] is None or b["v"] < a["v"]:
                    bad.append((a["idx"], b["idx"], "reads went backwards"))
    return ("safety.maxreg_atomic", not bad, f"violations: {bad}")


def check_ac_at_most_one(bundle, view):
    table = ops_table(bundle)
    slots = {}
    for idx, row in sorted(table.items()):
        spec, r = row["spec"] or {}, row["result"]
        if spec.get("op") != "ac_request" or not r or not r.get("granted"):
            continue
        slots.setdefault(r["slot"], set()).add(r["value"])
    bad = {s: sorted(vs) for s, vs in slots.items() if len(vs) > 1}
    return ("safety.ac_at_most_one", not bad, f"conflicting grants: {bad}")


def check_xfer_bound(bundle, view):
    k = bundle["scenario"]["meta"].get("k")
    targets = bundle["final"]["xfer_targets"]
    ok = len(targets) <= k + 1
    return ("perf.xfer_targets_linear", ok, f"k={k}, distinct transfer sources={len(targets)}")


def run_checks(bundle, oracle=None):
    """All applicable checks for this bundle; (name, ok, info) triples."""
    scn = bundle["scenario"]
    view = rebuild_view(scn, oracle=oracle, ledger=bundle.get("ledger"))
    checks = [check_liveness, check_certificates, check_key_update_audit,
              check_installs, check_convergence]
    if scn["app"]["kind"] == "dbla":
        checks.append(check_dbla_outputs)
    elif scn["app"]["kind"] == "maxreg":
        checks.append(check_maxreg)
    if scn["acl"]["mode"] == "quorum":
        checks.append(check_ac_at_most_one)
    if scn["meta"].get("k") is not None:
        checks.append(check_xfer_bound)
    return [c(bundle, view) for c in checks]
