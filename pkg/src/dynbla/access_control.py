"""Access control for proposals: who may put a value on the wire.

Three interchangeable modes issue the same certificate shape:

- "admin": a fixed admin set signs offline; no replica round. Tolerates a
  third of the admins being bad, so a certificate needs b+1 admin signatures.
- "sanity": each replica checks the value against a local predicate; b+1
  forward-secure approvals prove one correct replica vouched for it.
- "quorum": a full quorum must approve, and approving replicas remember the
  slot so they refuse conflicting values later. Quorum intersection then
  grants at most one certificate per slot. The approval memory rides state
  transfer into new configurations.

Replica-backed certificates are finished with a countersigning round, which
pins them to the configuration's key epoch the same way agreement outputs
are pinned.
"""

from __future__ import annotations

from .fscrypto import FsSig
from .lattice import canon, fault_budget, value_from_jsonable, value_to_jsonable, Config
from .simnet import Msg

MODES = ("admin", "sanity", "quorum")


class AccessControl:
    """Descriptor for one access-control object: mode and thresholds."""

    def __init__(self, object_id: str, mode: str, admins=()):
        if mode not in MODES:
            raise ValueError(f"unknown access-control mode {mode!r}")
        if mode == "admin" and not admins:
            raise ValueError("admin mode needs a non-empty admin set")
        self.object_id = object_id
        self.mode = mode
        self.admins = frozenset(admins)

    def needed(self, config: Config) -> int:
        if self.mode == "sanity":
            return config.fault_budget() + 1
        return config.quorum_size()

    def denials_decisive(self, config: Config) -> int:
        return len(config.replicas()) - self.needed(config) + 1

    def admin_threshold(self) -> int:
        return fault_budget(len(self.admins)) + 1


def appr_payload(object_id: str, config: Config, slot: str, value) -> bytes:
    return canon(["acappr", object_id, config, slot, value])


def accf_payload(object_id: str, config: Config, slot: str, value, approvals) -> bytes:
    return canon(["accf", object_id, config, slot, value, approvals])


def admin_payload(object_id: str, slot: str, value) -> bytes:
    return canon(["acadmin", object_id, slot, value])


class AcCert:
    __slots__ = ("mode", "object_id", "slot", "value", "config", "approvals", "cacks", "_canon")

    def __init__(self, mode, object_id, slot, value, config, approvals, cacks):
        self.mode = mode
        self.object_id = object_id
        self.slot = slot
        self.value = value
        self.config = config
        self.approvals = dict(approvals)
        self.cacks = dict(cacks)
        self._canon = None

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = canon(
                ["accert", self.mode, self.object_id, self.slot, self.value, self.config, self.approvals, self.cacks]
            )
        return self._canon

    def to_jsonable(self):
        if self.mode == "admin":
            approvals = dict(self.approvals)
            cacks = {}
        else:
            approvals = {p: s.to_jsonable() for p, s in self.approvals.items()}
            cacks = {p: s.to_jsonable() for p, s in self.cacks.items()}
        return {
            "ackind": self.mode,
            "oid": self.object_id,
            "slot": self.slot,
            "v": value_to_jsonable(self.value),
            "cfg": None if self.config is None else self.config.to_jsonable()["cfg"],
            "appr": approvals,
            "cacks": cacks,
        }

    @classmethod
    def from_jsonable(cls, d) -> "AcCert":
        mode = d["ackind"]
        config = None if d["cfg"] is None else Config.from_jsonable({"cfg": d["cfg"]})
        if mode == "admin":
            approvals = dict(d["appr"])
            cacks = {}
        else:
            approvals = {p: FsSig.from_jsonable(s) for p, s in d["appr"].items()}
            cacks = {p: FsSig.from_jsonable(s) for p, s in d["cacks"].items()}
        return cls(mode, d["oid"], d["slot"], value_from_jsonable(d["v"]), config, approvals, cacks)


def make_admin_cert(oracle, ac: AccessControl, slot: str, value, signers) -> AcCert:
    pl = admin_payload(ac.object_id, slot, value)
    sigs = {s: oracle.plain_sign(s, pl).hex() for s in signers}
    return AcCert("admin", ac.object_id, slot, value, None, sigs, {})


def verify_cert(ac: AccessControl, oracle, cert) -> bool:
    if not isinstance(cert, AcCert):
        return False
    if cert.mode != ac.mode or cert.object_id != ac.object_id:
        return False
    if ac.mode == "admin":
        pl = admin_payload(ac.object_id, cert.slot, cert.value)
        good = 0
        for pid, hexsig in cert.approvals.items():
            if pid not in ac.admins or not isinstance(hexsig, str):
                return False
            if not oracle.plain_verify(pl, pid, bytes.fromhex(hexsig)):
                return False
            good += 1
        return good >= ac.admin_threshold()
    config = cert.config
    if not isinstance(config, Config):
        return False
    ts = config.height()
    members = config.replicas()
    if not set(cert.approvals) <= members or len(cert.approvals) < ac.needed(config):
        return False
    apl = appr_payload(ac.object_id, config, cert.slot, cert.value)
    for pid, sig in cert.approvals.items():
        if not oracle.fs_verify(apl, pid, sig, ts):
            return False
    if not config.is_quorum(cert.cacks.keys()):
        return False
    cpl = accf_payload(ac.object_id, config, cert.slot, cert.value, cert.approvals)
    for pid, sig in cert.cacks.items():
        if not oracle.fs_verify(cpl, pid, sig, ts):
            return False
    return True


def make_ac_input_check(ac: AccessControl, oracle):
    """Input-value predicate: the certificate must cover this exact value."""

    def check(value, cert) -> bool:
        if isinstance(cert, dict):
            try:
                cert = AcCert.from_jsonable(cert)
            except (KeyError, TypeError, ValueError):
                return False
        return (
            isinstance(cert, AcCert)
            and canon(cert.value) == canon(value)
            and verify_cert(ac, oracle, cert)
        )

    return check


class AcStore:
    """Replica endpoint for sanity/quorum approvals."""

    def __init__(self, store_id: str, ac: AccessControl, decide=None):
        if ac.mode == "admin":
            raise ValueError("admin mode has no replica store")
        self.store_id = store_id
        self.ac = ac
        self.decide = decide
        self.approved: dict[str, object] = {}

    def _decide(self, slot: str, value) -> bool:
        if self.ac.mode == "quorum" and slot in self.approved:
            return canon(self.approved[slot]) == canon(value)
        if self.decide is not None and not self.decide(slot, value):
            return False
        if self.ac.mode == "quorum":
            self.approved[slot] = value
        return True

    def handle(self, core, frm, msg) -> bool:
        if msg.obj != self.ac.object_id:
            return False
        if msg.desc == "ac.req":
            slot, value = msg.body.get("slot"), msg.body.get("value")
            config = msg.body["config"]
            sn = msg.body.get("sn")
            if not isinstance(slot, str):
                return True
            if self._decide(slot, value):
                sig = core.fs_sign(appr_payload(self.ac.object_id, config, slot, value), config.height())
                if sig is not None:
                    core.api.send(frm, Msg("ac.approve", self.ac.object_id, {"sig": sig, "sn": sn}))
            else:
                core.api.send(frm, Msg("ac.deny", self.ac.object_id, {"sn": sn}))
            return True
        if msg.desc == "ac.confirm":
            slot, value = msg.body.get("slot"), msg.body.get("value")
            approvals = msg.body.get("approvals")
            config = msg.body["config"]
            if not isinstance(approvals, dict):
                return True
            sig = core.fs_sign(
                accf_payload(self.ac.object_id, config, slot, value, approvals), config.height()
            )
            if sig is not None:
                core.api.send(frm, Msg("ac.cresp", self.ac.object_id, {"sig": sig, "sn": msg.body.get("sn")}))
            return True
        return False

    def xfer_snapshot(self):
        if self.ac.mode != "quorum":
            return None
        return sorted((s, v) for s, v in self.approved.items())

    def xfer_merge(self, payload) -> None:
        if self.ac.mode != "quorum" or not isinstance(payload, list):
            return
        for item in payload:
            if isinstance(item, (tuple, list)) and len(item) == 2 and isinstance(item[0], str):
                self.approved.setdefault(item[0], item[1])


class AcClient:
    """Certificate-request session attached to a ClientHub."""

    def __init__(self, hub, ac: AccessControl):
        if ac.mode == "admin":
            raise ValueError("admin certificates are made offline, not requested")
        self.hub = hub
        self.ac = ac
        self.sn = 0
        self.phase = "idle"
        self.anchor = None
        self.restarts = 0
        self._slot = None
        self._value = None
        self._done = None
        self._approvals = {}
        self._denials = set()
        self._cacks = {}
        hub.add(self)

    def busy(self) -> bool:
        return self.phase != "idle"

    def request(self, slot: str, value, done) -> None:
        if self.busy():
            raise RuntimeError("one request at a time per client")
        self._slot, self._value, self._done = slot, value, done
        self._req_round()

    def _req_round(self) -> None:
        self.sn += 1
        self.phase = "req"
        self.anchor = self.hub.anchor()
        self._approvals = {}
        self._denials = set()
        msg = Msg(
            "ac.req",
            self.ac.object_id,
            {"slot": self._slot, "value": self._value, "sn": self.sn, "config": self.anchor},
        )
        for r in sorted(self.anchor.replicas()):
            self.hub.api.send(r, msg)

    def on_adopt(self) -> None:
        if self.busy():
            self.restarts += 1
            self._req_round()

    def on_deliver(self, frm, msg) -> bool:
        if msg.obj != self.ac.object_id:
            return False
        if msg.desc == "ac.approve":
            self._on_approve(frm, msg)
            return True
        if msg.desc == "ac.deny":
            self._on_deny(frm, msg)
            return True
        if msg.desc == "ac.cresp":
            self._on_cresp(frm, msg)
            return True
        return False

    def _finish(self, cert) -> None:
        self.phase = "idle"
        done, self._done = self._done, None
        done(cert)

    def _on_approve(self, frm, msg) -> None:
        if self.phase != "req" or msg.body.get("sn") != self.sn:
            return
        if frm not in self.anchor.replicas() or frm in self._approvals:
            return
        sig = msg.body.get("sig")
        pl = appr_payload(self.ac.object_id, self.anchor, self._slot, self._value)
        if not self.hub.api.oracle.fs_verify(pl, frm, sig, self.anchor.height()):
            return
        self._approvals[frm] = sig
        if len(self._approvals) >= self.ac.needed(self.anchor):
            self._confirm_round()

    def _on_deny(self, frm, msg) -> None:
        if self.phase != "req" or msg.body.get("sn") != self.sn:
            return
        if frm not in self.anchor.replicas():
            return
        self._denials.add(frm)
        if len(self._denials) >= self.ac.denials_decisive(self.anchor):
            self._finish(None)

    def _confirm_round(self) -> None:
        self.sn += 1
        self.phase = "confirm"
        self._cacks = {}
        msg = Msg(
            "ac.confirm",
            self.ac.object_id,
            {
                "slot": self._slot,
                "value": self._value,
                "approvals": dict(self._approvals),
                "sn": self.sn,
                "config": self.anchor,
            },
        )
        for r in sorted(self.anchor.replicas()):
            self.hub.api.send(r, msg)

    def _on_cresp(self, frm, msg) -> None:
        if self.phase != "confirm" or msg.body.get("sn") != self.sn:
            return
        if frm not in self.anchor.replicas() or frm in self._cacks:
            return
        sig = msg.body.get("sig")
        cpl = accf_payload(self.ac.object_id, self.anchor, self._slot, self._value, self._approvals)
        if not self.hub.api.oracle.fs_verify(cpl, frm, sig, self.anchor.height()):
            return
        self._cacks[frm] = sig
        if self.anchor.is_quorum(self._cacks.keys()):
            cert = AcCert(
                self.ac.mode,
                self.ac.object_id,
                self._slot,
                self._value,
                self.anchor,
                self._approvals,
                self._cacks,
            )
            self._finish(cert)
