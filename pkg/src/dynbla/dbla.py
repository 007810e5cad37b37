"""Dynamic Byzantine lattice agreement.

Client side: a two-phase propose. Phase one refines a value set against one
configuration until a quorum signs byte-identical copies; phase two has a
quorum countersign the collected acks with forward-secure keys at the
configuration's height. The pair of quorums makes the output self-verifying
and, via the key watermarks, impossible to anchor at a superseded
configuration after its keys moved on.

Replica side (DynamicReplica): serves requests only at its installed,
current, highest-known configuration; adopting a longer history immediately
raises the signing watermark; joining a higher configuration runs state
transfer (read a quorum of every configuration from the current one up to,
not including, the target) before announcing completion; a quorum of
completion announcements installs the configuration.

The replica core is value-agnostic: per-object stores plug in to serve
reads/writes and to snapshot/merge state for transfer, so the max-register
and access-control objects reuse the same gating and transfer machinery.
"""

from __future__ import annotations

import functools

from .broadcast import RbEndpoint, UrbEndpoint
from .fscrypto import FsSig
from .lattice import Config, History, canon, value_from_jsonable, value_to_jsonable
from .simnet import Msg

GENESIS_CERT = {"kind": "genesis"}


class InputValue:
    __slots__ = ("value", "cert", "_canon")

    def __init__(self, value, cert: dict):
        self.value = value
        self.cert = cert
        self._canon = None

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = canon(["iv", self.value, self.cert])
        return self._canon

    def to_jsonable(self):
        return {"v": value_to_jsonable(self.value), "c": self.cert}

    @classmethod
    def from_jsonable(cls, d) -> "InputValue":
        return cls(value_from_jsonable(d["v"]), d["c"])

    def __eq__(self, other):
        return isinstance(other, InputValue) and self.canon() == other.canon()

    def __hash__(self):
        return hash(self.canon())

    def __repr__(self):
        return f"InputValue({self.value!r})"


class DynamicObject:
    """Wiring for one dynamic object: id, genesis, validity predicates."""

    def __init__(self, object_id: str, genesis: Config, check_value=None, check_history=None, genesis_values=()):
        self.object_id = object_id
        self.genesis = genesis
        self.genesis_history = History([genesis])
        self.genesis_values = list(genesis_values)
        self._check_value = check_value
        self._check_history = check_history
        self._vcache: dict[bytes, bool] = {}
        self._hcache: dict[bytes, bool] = {}
        self._ocache: dict = {}

    def set_check_history(self, fn) -> None:
        self._check_history = fn

    def set_check_value(self, fn) -> None:
        self._check_value = fn

    def check_value(self, value, cert) -> bool:
        key = canon(["iv", value, cert])
        hit = self._vcache.get(key)
        if hit is None:
            for gv in self.genesis_values:
                if gv.value == value and gv.cert == cert:
                    hit = True
                    break
            else:
                hit = bool(self._check_value and self._check_value(value, cert))
            self._vcache[key] = hit
        return hit

    def check_history(self, h: History, cert: dict) -> bool:
        key = canon(["h", h, cert])
        hit = self._hcache.get(key)
        if hit is None:
            if h == self.genesis_history and cert == GENESIS_CERT:
                hit = True
            else:
                hit = bool(self._check_history and self._check_history(h, cert))
            self._hcache[key] = hit
        return hit


# -- signed payloads ------------------------------------------------------


def input_value_payload(object_id: str, value) -> bytes:
    return canon(["input", object_id, value])


def make_plain_input_cert(oracle, object_id: str, signer: str, value) -> dict:
    sig = oracle.plain_sign(signer, input_value_payload(object_id, value))
    return {"kind": "plain", "signer": signer, "sig": sig.hex()}


def check_plain_input(oracle, object_id: str):
    def check(value, cert) -> bool:
        return (
            isinstance(cert, dict)
            and cert.get("kind") == "plain"
            and oracle.plain_verify(
                input_value_payload(object_id, value),
                cert.get("signer", ""),
                bytes.fromhex(cert.get("sig", "")),
            )
        )

    return check


def accept_all(value, cert) -> bool:
    return True


def history_payload(group: str, h: History) -> bytes:
    return canon(["history", group, h])


def make_authority_history_cert(oracle, group: str, h: History) -> dict:
    sig = oracle.plain_sign("authority", history_payload(group, h))
    return {"kind": "authority", "sig": sig.hex()}


def check_authority_history(oracle, group: str):
    def check(h: History, cert: dict) -> bool:
        return (
            isinstance(cert, dict)
            and cert.get("kind") == "authority"
            and oracle.plain_verify(
                history_payload(group, h), "authority", bytes.fromhex(cert.get("sig", ""))
            )
        )

    return check


def presp_payload(object_id: str, config: Config, values: list[InputValue]) -> bytes:
    return canon(["presp", object_id, config, [iv.canon() for iv in values]])


def cresp_payload(object_id: str, config: Config, packs: dict[str, FsSig]) -> bytes:
    return canon(["cresp", object_id, config, packs])


def join_values(values: list[InputValue]):
    return functools.reduce(lambda a, b: a.join(b), (iv.value for iv in values))


# -- output certificates ---------------------------------------------------


class OutputCert:
    __slots__ = ("values", "history", "hist_cert", "packs", "cacks", "_canon")

    def __init__(self, values, history: History, hist_cert: dict, packs: dict, cacks: dict):
        self.values = tuple(values)
        self.history = history
        self.hist_cert = hist_cert
        self.packs = dict(packs)
        self.cacks = dict(cacks)
        self._canon = None

    def anchor(self) -> Config:
        return self.history.max_element()

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = canon(
                ["ocert", list(self.values), self.history, self.hist_cert, self.packs, self.cacks]
            )
        return self._canon

    def to_jsonable(self):
        # the history certificate may itself be an output certificate (one
        # level of chaining per adopted history), so tag that case
        if isinstance(self.hist_cert, OutputCert):
            hcert = {"kind": "ocert", "oc": self.hist_cert.to_jsonable()}
        else:
            hcert = self.hist_cert
        return {
            "values": [iv.to_jsonable() for iv in self.values],
            "hist": self.history.to_jsonable(),
            "hcert": hcert,
            "packs": {p: s.to_jsonable() for p, s in self.packs.items()},
            "cacks": {p: s.to_jsonable() for p, s in self.cacks.items()},
        }

    @classmethod
    def from_jsonable(cls, d) -> "OutputCert":
        hcert = d["hcert"]
        if isinstance(hcert, dict) and hcert.get("kind") == "ocert":
            hcert = cls.from_jsonable(hcert["oc"])
        return cls(
            [InputValue.from_jsonable(v) for v in d["values"]],
            History.from_jsonable(d["hist"]),
            hcert,
            {p: FsSig.from_jsonable(s) for p, s in d["packs"].items()},
            {p: FsSig.from_jsonable(s) for p, s in d["cacks"].items()},
        )


def verify_output(obj: DynamicObject, oracle, w, cert) -> bool:
    """Pure check that (w, cert) is a legitimate output of this object."""
    if not isinstance(cert, OutputCert) or not cert.values:
        return False
    key = (id(oracle), canon(["oc", w, cert.canon()]))
    hit = obj._ocache.get(key)
    if hit is not None:
        return hit
    ok = _verify_output(obj, oracle, w, cert)
    obj._ocache[key] = ok
    return ok


def _verify_output(obj, oracle, w, cert: OutputCert) -> bool:
    for iv in cert.values:
        if not obj.check_value(iv.value, iv.cert):
            return False
    if canon(join_values(list(cert.values))) != canon(w):
        return False
    if not obj.check_history(cert.history, cert.hist_cert):
        return False
    config = cert.anchor()
    ts = config.height()
    if not config.is_quorum(cert.packs.keys()):
        return False
    vlist = sorted(cert.values, key=lambda iv: iv.canon())
    ppl = presp_payload(obj.object_id, config, vlist)
    for pid, sig in cert.packs.items():
        if not oracle.fs_verify(ppl, pid, sig, ts):
            return False
    if not config.is_quorum(cert.cacks.keys()):
        return False
    cpl = cresp_payload(obj.object_id, config, cert.packs)
    for pid, sig in cert.cacks.items():
        if not oracle.fs_verify(cpl, pid, sig, ts):
            return False
    return True


# -- client side ------------------------------------------------------------


class ClientHub:
    """Client process hosting protocol sessions that share one history."""

    def __init__(self, group: str, obj_for_history: DynamicObject, roster):
        self.group = group
        self.hobj = obj_for_history
        self.roster = roster
        self.history = obj_for_history.genesis_history
        self.hist_cert = GENESIS_CERT
        self.sessions = []
        self._uh_waiting: list[tuple[History, object]] = []

    def bind(self, api):
        self.api = api
        self.rb = RbEndpoint(api, self.roster, self._on_rb)

    def add(self, session):
        self.sessions.append(session)
        return session

    def on_deliver(self, frm, msg):
        if self.rb.handle(frm, msg):
            return
        for s in self.sessions:
            if s.on_deliver(frm, msg):
                return

    def anchor(self) -> Config:
        return self.history.max_element()

    def update_history(self, h: History, cert: dict, done=None) -> None:
        self.rb.broadcast("hist.new", self.group, {"hist": h, "cert": cert})
        if h.contained_in(self.history):
            if done:
                done()
        elif done:
            self._uh_waiting.append((h, done))

    def _on_rb(self, origin, desc, obj, body):
        if desc != "hist.new":
            return
        self.consider(body["hist"], body["cert"])

    def consider(self, h: History, cert: dict) -> None:
        if h == self.history or not self.history.contained_in(h):
            return
        if not self.hobj.check_history(h, cert):
            return
        self.history = h
        self.hist_cert = cert
        self.api.upcall("adopt", {"hmax": h.max_element().height()})
        still = []
        for target, done in self._uh_waiting:
            if target.contained_in(self.history):
                done()
            else:
                still.append((target, done))
        self._uh_waiting = still
        for s in self.sessions:
            s.on_adopt()


class DblaClient:
    """One lattice-agreement session attached to a ClientHub."""

    def __init__(self, hub: ClientHub, obj: DynamicObject):
        self.hub = hub
        self.obj = obj
        self.vals: dict[bytes, InputValue] = {iv.canon(): iv for iv in obj.genesis_values}
        self.sn = 0
        self.phase = "idle"
        self.anchor = None
        self.packs: dict[str, FsSig] = {}
        self.cpacks: dict[str, FsSig] = {}
        self.cacks: dict[str, FsSig] = {}
        self.restarts = 0
        self._done = None
        hub.add(self)

    def busy(self) -> bool:
        return self.phase != "idle"

    def propose(self, value, cert: dict, done) -> None:
        if self.busy():
            raise RuntimeError("one propose at a time per client")
        if not self.obj.check_value(value, cert):
            raise ValueError("propose requires a verifiable input value")
        iv = InputValue(value, cert)
        self.vals.setdefault(iv.canon(), iv)
        self._done = done
        self._refine()

    def _sorted_vals(self) -> list[InputValue]:
        return [self.vals[k] for k in sorted(self.vals)]

    def _refine(self) -> None:
        self.sn += 1
        self.phase = "refine"
        self.anchor = self.hub.anchor()
        self.packs = {}
        vlist = self._sorted_vals()
        msg = Msg(
            "bla.propose",
            self.obj.object_id,
            {"values": vlist, "sn": self.sn, "config": self.anchor},
        )
        for r in sorted(self.anchor.replicas()):
            self.hub.api.send(r, msg)

    def on_adopt(self) -> None:
        if self.busy():
            self.restarts += 1
            self._refine()

    def on_deliver(self, frm, msg) -> bool:
        if msg.obj != self.obj.object_id:
            return False
        if msg.desc == "bla.presp":
            self._on_presp(frm, msg)
            return True
        if msg.desc == "bla.cresp":
            self._on_cresp(frm, msg)
            return True
        return False

    def _on_presp(self, frm, msg) -> None:
        if self.phase != "refine" or msg.body.get("sn") != self.sn:
            return
        if frm not in self.anchor.replicas():
            return
        rvals = msg.body.get("values")
        if not isinstance(rvals, list) or not all(isinstance(iv, InputValue) for iv in rvals):
            return
        valid = [iv for iv in rvals if self.obj.check_value(iv.value, iv.cert)]
        new = [iv for iv in valid if iv.canon() not in self.vals]
        if new:
            for iv in new:
                self.vals[iv.canon()] = iv
            self.restarts += 1
            self._refine()
            return
        if len(valid) != len(rvals):
            return
        if [iv.canon() for iv in rvals] != [iv.canon() for iv in self._sorted_vals()]:
            return
        ppl = presp_payload(self.obj.object_id, self.anchor, self._sorted_vals())
        sig = msg.body.get("sig")
        if not self.hub.api.oracle.fs_verify(ppl, frm, sig, self.anchor.height()):
            return
        self.packs[frm] = sig
        if self.anchor.is_quorum(self.packs.keys()):
            self._confirm()

    def _confirm(self) -> None:
        self.sn += 1
        self.phase = "confirm"
        self.cpacks = dict(self.packs)
        self.cacks = {}
        msg = Msg(
            "bla.confirm",
            self.obj.object_id,
            {"packs": self.cpacks, "sn": self.sn, "config": self.anchor},
        )
        for r in sorted(self.anchor.replicas()):
            self.hub.api.send(r, msg)

    def _on_cresp(self, frm, msg) -> None:
        if self.phase != "confirm" or msg.body.get("sn") != self.sn:
            return
        if frm not in self.anchor.replicas() or frm in self.cacks:
            return
        cpl = cresp_payload(self.obj.object_id, self.anchor, self.cpacks)
        sig = msg.body.get("sig")
        if not self.hub.api.oracle.fs_verify(cpl, frm, sig, self.anchor.height()):
            return
        self.cacks[frm] = sig
        if self.anchor.is_quorum(self.cacks.keys()):
            vlist = self._sorted_vals()
            w = join_values(vlist)
            cert = OutputCert(vlist, self.hub.history, self.hub.hist_cert, self.cpacks, self.cacks)
            self.phase = "idle"
            done, self._done = self._done, None
            done(w, cert)


# -- replica side ------------------------------------------------------------


class DblaStore:
    """Replica value-set store for one lattice-agreement object."""

    def __init__(self, store_id: str, obj: DynamicObject):
        self.store_id = store_id
        self.obj = obj
        self.vals: dict[bytes, InputValue] = {}
        for iv in obj.genesis_values:
            self.vals[iv.canon()] = iv

    def snapshot_sorted(self) -> list[InputValue]:
        return [self.vals[k] for k in sorted(self.vals)]

    def merge(self, ivs) -> None:
        for iv in ivs:
            if isinstance(iv, InputValue) and iv.canon() not in self.vals:
                if self.obj.check_value(iv.value, iv.cert):
                    self.vals[iv.canon()] = iv

    def handle(self, core, frm, msg) -> bool:
        if msg.obj != self.obj.object_id:
            return False
        if msg.desc == "bla.propose":
            config = msg.body["config"]
            vals = msg.body.get("values")
            if isinstance(vals, list):
                self.merge(vals)
            vlist = self.snapshot_sorted()
            sig = core.fs_sign(presp_payload(self.obj.object_id, config, vlist), config.height())
            if sig is not None:
                core.api.send(
                    frm,
                    Msg("bla.presp", self.obj.object_id, {"values": vlist, "sig": sig, "sn": msg.body["sn"]}),
                )
            return True
        if msg.desc == "bla.confirm":
            config = msg.body["config"]
            packs = msg.body.get("packs")
            if not isinstance(packs, dict):
                return True
            # countersigning does not validate the acks; verifiers do
            sig = core.fs_sign(cresp_payload(self.obj.object_id, config, packs), config.height())
            if sig is not None:
                core.api.send(frm, Msg("bla.cresp", self.obj.object_id, {"sig": sig, "sn": msg.body["sn"]}))
            return True
        return False

    def xfer_snapshot(self):
        return self.snapshot_sorted()

    def xfer_merge(self, payload) -> None:
        if isinstance(payload, list):
            self.merge(payload)


class DynamicReplica:
    """Gating, history adoption, state transfer and installs; stores plug in."""

    def __init__(self, group: str, genesis: Config, stores, check_history, roster):
        self.group = group
        self.genesis = genesis
        self.stores = list(stores)
        self.check_history = check_history
        self.roster = roster
        self.history = History([genesis])
        self.hist_cert = GENESIS_CERT
        self.ccurr = genesis
        self.cinst = genesis
        self.installed = {genesis}
        self.install_votes: dict[Config, set[str]] = {}
        self.buffered: list[tuple[str, Msg]] = []
        self.xfer_done: set[Config] = set()
        self.xfer_target: Config | None = None
        self.xfer_sn = 0
        self.xfer_acks: set[str] = set()
        self.xfer_targets_sent: set[str] = set()
        self.install_hook = None
        self.dropped = 0

    def bind(self, api):
        self.api = api
        self.rb = RbEndpoint(api, self.roster, self._on_rb)
        self.urb = UrbEndpoint(api, self._on_urb)
        api.oracle.update_fs_keys(api.pid, self.genesis.height())

    def chighest(self) -> Config:
        return self.history.max_element()

    def fs_sign(self, payload: bytes, ts: int):
        return self.api.oracle.fs_sign(self.api.pid, payload, ts)

    # -- delivery routing --------------------------------------------------

    def on_deliver(self, frm, msg) -> None:
        if self.rb.handle(frm, msg):
            return
        if self.urb.handle(frm, msg):
            return
        if msg.desc == "xfer.read":
            self._on_xfer_read(frm, msg)
            return
        if msg.desc == "xfer.resp":
            self._on_xfer_resp(frm, msg)
            return
        self._gate(frm, msg)

    def _gate(self, frm, msg) -> None:
        config = msg.body.get("config")
        if not isinstance(config, Config):
            self.dropped += 1
            return
        ch = self.chighest()
        if config == ch:
            if self.cinst == config:
                for store in self.stores:
                    if store.handle(self, frm, msg):
                        return
                self.dropped += 1
            else:
                self.buffered.append((frm, msg))
        elif config.leq(ch):
            self.dropped += 1
        elif ch.leq(config):
            self.buffered.append((frm, msg))
        else:
            self.dropped += 1

    def _regate(self) -> None:
        buffered, self.buffered = self.buffered, []
        ch = self.chighest()
        for frm, msg in buffered:
            if msg.desc == "xfer.read":
                if msg.body["config"] != ch and msg.body["config"].leq(ch):
                    self.api.requeue(frm, msg)
                else:
                    self.buffered.append((frm, msg))
                continue
            config = msg.body["config"]
            if config == ch:
                if self.cinst == config:
                    self.api.requeue(frm, msg)
                else:
                    self.buffered.append((frm, msg))
            elif config.leq(ch):
                self.dropped += 1
            elif ch.leq(config):
                self.buffered.append((frm, msg))
            else:
                self.dropped += 1

    # -- history adoption ----------------------------------------------------

    def _on_rb(self, origin, desc, obj, body) -> None:
        if desc != "hist.new":
            return
        h, cert = body.get("hist"), body.get("cert")
        if not isinstance(h, History):
            return
        if h == self.history or not self.history.contained_in(h):
            return
        if not self.check_history(h, cert):
            return
        self.history = h
        self.hist_cert = cert
        self.api.oracle.update_fs_keys(self.api.pid, h.max_element().height())
        self.api.upcall("adopt", {"hmax": h.max_element().height()})
        self._check_installs()
        self._regate()
        self._advance_xfer()

    # -- installs --------------------------------------------------------------

    def _on_urb(self, origin, desc, obj, body, config: Config) -> None:
        if desc != "xfer.done" or origin not in config.replicas():
            return
        self.install_votes.setdefault(config, set()).add(origin)
        self._check_installs()

    def _check_installs(self) -> None:
        hset = set(self.history.configs)
        for config in sorted(self.install_votes, key=lambda c: c.height()):
            if config in self.installed or config not in hset:
                continue
            if not config.is_quorum(self.install_votes[config]):
                continue
            self.installed.add(config)
            if self.cinst.leq(config) and self.cinst != config:
                self.cinst = config
            self.ccurr = self.ccurr.join(config)
            detail = {"h": config.height(), "cid": config.cid()}
            if self.install_hook is not None:
                detail.update(self.install_hook(self, config))
            self.api.upcall("install", detail)
            self.api.fact(f"inst:h{config.height()}")
            self._regate()
            self._advance_xfer()

    # -- state transfer ----------------------------------------------------------

    def _cnext(self) -> Config | None:
        pid = self.api.pid
        for config in reversed(self.history.configs):
            if pid in config.replicas():
                return config
        return None

    def _advance_xfer(self) -> None:
        while True:
            cnext = self._cnext()
            if cnext is None or cnext.leq(self.ccurr):
                self.xfer_target = None
                return
            remaining = [
                c
                for c in self.history.configs
                if c != cnext and self.ccurr.leq(c) and c not in self.xfer_done
            ]
            if not remaining:
                self.ccurr = cnext
                self.xfer_target = None
                self.urb.broadcast(cnext, "xfer.done", self.group, {})
                continue
            target = remaining[0]
            if target != self.xfer_target:
                self.xfer_target = target
                self.xfer_sn += 1
                self.xfer_acks = set()
                self.xfer_targets_sent.add(target.cid())
                msg = Msg("xfer.read", self.group, {"sn": self.xfer_sn, "config": target})
                for r in sorted(target.replicas()):
                    self.api.send(r, msg)
            return

    def _on_xfer_read(self, frm, msg) -> None:
        config = msg.body.get("config")
        if not isinstance(config, Config):
            return
        ch = self.chighest()
        if config != ch and config.leq(ch):
            payload = {s.store_id: s.xfer_snapshot() for s in self.stores}
            self.api.send(frm, Msg("xfer.resp", self.group, {"sn": msg.body["sn"], "payload": payload}))
        else:
            self.buffered.append((frm, msg))

    def _on_xfer_resp(self, frm, msg) -> None:
        if self.xfer_target is None or msg.body.get("sn") != self.xfer_sn:
            return
        if frm not in self.xfer_target.replicas() or frm in self.xfer_acks:
            return
        payload = msg.body.get("payload")
        if not isinstance(payload, dict):
            return
        for store in self.stores:
            if store.store_id in payload:
                store.xfer_merge(payload[store.store_id])
        self.xfer_acks.add(frm)
        if self.xfer_target.is_quorum(self.xfer_acks):
            self.xfer_done.add(self.xfer_target)
            self._advance_xfer()
