"""Scenario files: schema, validation and built-in scenario families.

A scenario is a plain dict (usually loaded from JSON) describing one
simulated run: which replicas exist at genesis, which clients there are,
what operations they invoke and when, and what the adversary does.  The
runner turns a validated scenario into a live world; everything below is
pure data so scenarios can be stored, diffed and replayed.
"""

from __future__ import annotations

import copy

from ..lattice import fault_budget
from ..simnet import DEFAULT_STEP_CAP, Trigger

SCHEMA_VERSION = 1
APP_KINDS = ("dbla", "maxreg", "none")
ACL_MODES = ("none", "sanity", "quorum", "admin")
ORACLE_KINDS = ("ledger", "keychain")
OP_KINDS = ("propose", "write", "read", "update_config", "ac_request")


class ScenarioError(ValueError):
    """A scenario dict failed validation."""


def parse_trigger(spec):
    """Build a simulator Trigger from the JSON form.

    {"at": n} fires no earlier than step n; {"after": fact, "offset": n}
    fires no earlier than n steps past the step where fact was noted.
    An empty spec means "as soon as possible".
    """
    if "after" in spec:
        return Trigger(fact=spec["after"], offset=int(spec.get("offset", 0)))
    return Trigger(at=int(spec.get("at", 0)))


def _check_trigger(spec, where, errors):
    if "after" in spec and "at" in spec:
        errors.append(f"{where}: give either 'at' or 'after', not both")
        return
    if "after" in spec:
        if not isinstance(spec["after"], str) or not spec["after"]:
            errors.append(f"{where}: 'after' must be a fact name")
        off = spec.get("offset", 0)
        if not isinstance(off, int) or isinstance(off, bool) or off < 0:
            errors.append(f"{where}: 'offset' must be a non-negative int")
    elif "at" in spec:
        at = spec["at"]
        if not isinstance(at, int) or isinstance(at, bool) or at < 0:
            errors.append(f"{where}: 'at' must be a non-negative int")


def _is_exempt(corruption):
    # Corruptions scheduled on an install fact hit a config that is already
    # superseded, so they do not count against that config's fault budget.
    if corruption.get("exempt") is True:
        return True
    return str(corruption.get("after", "")).startswith("inst:")


def validate(scn):
    """Check a scenario dict and return a normalized copy.

    Raises ScenarioError listing every problem found.  Normalization fills
    defaults (seed, app, acl, adversary, max_steps) so the runner can rely
    on all keys being present.
    """
    if not isinstance(scn, dict):
        raise ScenarioError("scenario must be a dict")
    errors = []
    out = copy.deepcopy(scn)

    if out.get("version") != SCHEMA_VERSION:
        errors.append(f"version must be {SCHEMA_VERSION}")
    if not isinstance(out.get("name"), str) or not out.get("name"):
        errors.append("name must be a non-empty string")

    seed = out.setdefault("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append("seed must be a non-negative int")

    genesis = out.get("genesis")
    if not isinstance(genesis, list) or not genesis:
        errors.append("genesis must be a non-empty list of replica ids")
        genesis = []
    clients = out.get("clients")
    if not isinstance(clients, list) or not clients:
        errors.append("clients must be a non-empty list")
        clients = []
    extra = out.setdefault("extra_replicas", [])
    replicas = list(genesis) + list(extra)
    everyone = replicas + list(clients)
    if len(set(everyone)) != len(everyone):
        errors.append("process ids must be unique across genesis, extra_replicas and clients")

    app = out.setdefault("app", {"kind": "dbla"})
    if app.get("kind") not in APP_KINDS:
        errors.append(f"app.kind must be one of {APP_KINDS}")
    acl = out.setdefault("acl", {"mode": "none"})
    if acl.get("mode") not in ACL_MODES:
        errors.append(f"acl.mode must be one of {ACL_MODES}")
    if acl.get("mode") == "admin":
        admins = acl.get("admins")
        if not isinstance(admins, list) or not admins:
            errors.append("acl.mode admin requires a non-empty acl.admins list")
    if out.setdefault("oracle", "ledger") not in ORACLE_KINDS:
        errors.append(f"oracle must be one of {ORACLE_KINDS}")

    ops = out.setdefault("ops", [])
    known = set(everyone)
    for i, op in enumerate(ops):
        where = f"ops[{i}]"
        kind = op.get("op")
        if kind not in OP_KINDS:
            errors.append(f"{where}: op must be one of {OP_KINDS}")
            continue
        if op.get("client") not in clients:
            errors.append(f"{where}: client must be a declared client id")
        _check_trigger(op, where, errors)
        if kind == "propose":
            if app.get("kind") != "dbla":
                errors.append(f"{where}: propose needs app.kind dbla")
            val = op.get("value")
            if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
                errors.append(f"{where}: value must be a list of strings")
        elif kind in ("write", "read"):
            if app.get("kind") != "maxreg":
                errors.append(f"{where}: {kind} needs app.kind maxreg")
            if kind == "write":
                v = op.get("value")
                if not isinstance(v, int) or isinstance(v, bool):
                    errors.append(f"{where}: value must be an int")
        elif kind == "update_config":
            add = op.get("add", [])
            rem = op.get("remove", [])
            if not add and not rem:
                errors.append(f"{where}: update_config needs add or remove")
            for r in list(add) + list(rem):
                if r not in known:
                    errors.append(f"{where}: unknown replica {r!r}")
        elif kind == "ac_request":
            if acl.get("mode") in ("none", "admin"):
                errors.append(f"{where}: ac_request needs acl.mode sanity or quorum")
            if not isinstance(op.get("slot"), str):
                errors.append(f"{where}: slot must be a string")
            if not isinstance(op.get("value"), str):
                errors.append(f"{where}: value must be a string")

    adv = out.setdefault("adversary", {})
    corruptions = adv.setdefault("corruptions", [])
    for i, c in enumerate(corruptions):
        where = f"adversary.corruptions[{i}]"
        if c.get("pid") not in known:
            errors.append(f"{where}: unknown pid")
        if not isinstance(c.get("script", "silent"), str):
            errors.append(f"{where}: script must be a name")
        c.setdefault("script", "silent")
        _check_trigger(c, where, errors)
    holds = adv.setdefault("holds", [])
    for i, h in enumerate(holds):
        where = f"adversary.holds[{i}]"
        for side in ("frm", "to"):
            val = h.get(side)
            if val is not None and not (isinstance(val, list) and set(val) <= known):
                errors.append(f"{where}: {side} must be a list of known pids or absent")
        if not isinstance(h.get("desc", ""), str):
            errors.append(f"{where}: desc must be a string prefix")
        until = h.get("until")
        if until is not None:
            if not isinstance(until, dict):
                errors.append(f"{where}: until must be a trigger dict or null")
            else:
                _check_trigger(until, where + ".until", errors)

    cap = out.setdefault("max_steps", DEFAULT_STEP_CAP)
    if not isinstance(cap, int) or isinstance(cap, bool) or cap <= 0:
        errors.append("max_steps must be a positive int")

    # Availability: within each configuration era the adversary may corrupt
    # at most the fault budget of that era's membership.  Eras are a static
    # approximation from declared update ops, in order.
    bad = {c["pid"] for c in corruptions if not _is_exempt(c) and c.get("pid") in known}
    era = set(genesis)
    eras = [era]
    for op in ops:
        if op.get("op") == "update_config":
            era = (era | set(op.get("add", []))) - set(op.get("remove", []))
            eras.append(era)
    for members in eras:
        if members and len(bad & members) > fault_budget(len(members)):
            errors.append(
                "adversary corrupts %d of %s but the fault budget is %d"
                % (len(bad & members), sorted(members), fault_budget(len(members)))
            )

    if errors:
        raise ScenarioError("; ".join(errors))
    out.setdefault("meta", {})
    return out


# ---------------------------------------------------------------------------
# Built-in families.  Each builder returns a validated scenario dict; the
# seed is baked in so a scenario file fully determines the run.


def dbla_smoke(seed, clients=5):
    """Static membership, several clients proposing distinct singletons."""
    cids = [f"p{i}" for i in range(1, clients + 1)]
    ops = [
        {"op": "propose", "client": c, "value": [f"x{i}"], "at": i % 3}
        for i, c in enumerate(cids)
    ]
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"dbla-smoke-{seed}",
        "seed": seed,
        "genesis": ["r1", "r2", "r3", "r4"],
        "clients": cids,
        "app": {"kind": "dbla"},
        "ops": ops,
    })


def reconfig_dbla(seed):
    """One membership change racing live proposals; odd seeds also remove r1."""
    remove = ["r1"] if seed % 2 else []
    h1 = 4 + 1 + len(remove)
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"reconfig-dbla-{seed}",
        "seed": seed,
        "genesis": ["r1", "r2", "r3", "r4"],
        "extra_replicas": ["r5"],
        "clients": ["p", "q", "u"],
        "app": {"kind": "dbla"},
        "ops": [
            {"op": "propose", "client": "p", "value": ["a"], "at": 0},
            {"op": "update_config", "client": "u", "add": ["r5"], "remove": remove,
             "after": "op0:done", "offset": 1},
            {"op": "propose", "client": "q", "value": ["b"], "after": "op0:done", "offset": 2},
            {"op": "propose", "client": "p", "value": ["c"], "after": f"inst:h{h1}", "offset": 3},
        ],
    })


def reconfig_maxreg(seed):
    """Max-register traffic across a membership change."""
    h1 = 5
    ops = [
        {"op": "write", "client": "a", "value": 3 + (seed % 4), "at": 0},
        {"op": "write", "client": "b", "value": 9, "at": 1},
        {"op": "update_config", "client": "u", "add": ["r5"], "after": "op0:done", "offset": 1},
        {"op": "read", "client": "a", "after": f"inst:h{h1}", "offset": 2},
        {"op": "write", "client": "b", "value": 12, "after": f"inst:h{h1}", "offset": 1},
        {"op": "read", "client": "b", "after": "op4:done", "offset": 1},
    ]
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"reconfig-maxreg-{seed}",
        "seed": seed,
        "genesis": ["r1", "r2", "r3", "r4"],
        "extra_replicas": ["r5"],
        "clients": ["a", "b", "u"],
        "app": {"kind": "maxreg"},
        "ops": ops,
    })


def chain(seed, k):
    """k sequential membership changes, then a late joiner-backed proposal.

    Used to measure how many distinct configurations state transfer reads
    from: the whole run should touch at most k+1.
    """
    extra = [f"r{4 + i}" for i in range(1, k + 1)]
    ops = [{"op": "propose", "client": "p", "value": ["base"], "at": 0}]
    prev_fact = "op0:done"
    for i, r in enumerate(extra):
        ops.append({
            "op": "update_config", "client": "u", "add": [r],
            "after": prev_fact, "offset": 2,
        })
        prev_fact = f"inst:h{4 + i + 1}"
    ops.append({"op": "propose", "client": "q", "value": ["tail"],
                "after": prev_fact, "offset": 3})
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"chain-{k}-{seed}",
        "seed": seed,
        "genesis": ["r1", "r2", "r3", "r4"],
        "extra_replicas": extra,
        "clients": ["p", "q", "u"],
        "app": {"kind": "dbla"},
        "ops": ops,
        "meta": {"k": k},
    })


def ac_quorum_race(seed):
    """Two clients race conflicting values for one guarded slot."""
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"ac-quorum-race-{seed}",
        "seed": seed,
        "genesis": ["r1", "r2", "r3", "r4"],
        "clients": ["a", "b"],
        "app": {"kind": "none"},
        "acl": {"mode": "quorum"},
        "ops": [
            {"op": "ac_request", "client": "a", "slot": "s", "value": "x", "at": 0},
            {"op": "ac_request", "client": "b", "slot": "s", "value": "y", "at": 0},
        ],
    })


def ac_pattern(mask, seed=0):
    """Force which request each replica sees first for a contested slot.

    Bit i of mask set means r(i+1) sees a's request first; the rest see b's
    first.  Holds release later so every replica eventually sees both.
    """
    rids = ["r1", "r2", "r3", "r4"]
    first_a = [r for i, r in enumerate(rids) if mask & (1 << i)]
    first_b = [r for r in rids if r not in first_a]
    holds = []
    if first_a:
        holds.append({"frm": ["b"], "to": first_a, "desc": "ac.req", "until": {"at": 300}})
    if first_b:
        holds.append({"frm": ["a"], "to": first_b, "desc": "ac.req", "until": {"at": 400}})
    return validate({
        "version": SCHEMA_VERSION,
        "name": f"ac-pattern-{mask:04b}",
        "seed": seed,
        "genesis": rids,
        "clients": ["a", "b"],
        "app": {"kind": "none"},
        "acl": {"mode": "quorum"},
        "ops": [
            {"op": "ac_request", "client": "a", "slot": "s", "value": "x", "at": 0},
            {"op": "ac_request", "client": "b", "slot": "s", "value": "y", "at": 0},
        ],
        "adversary": {"holds": holds},
        "meta": {"mask": mask},
    })


FAMILIES = {
    "dbla-smoke": dbla_smoke,
    "reconfig-dbla": reconfig_dbla,
    "reconfig-maxreg": reconfig_maxreg,
    "chain": chain,
    "ac-quorum-race": ac_quorum_race,
    "ac-pattern": ac_pattern,
}
