"""Reconfiguration: turning the dynamic group into a self-governing one.

A configuration update is two lattice agreements chained end to end. The
first runs over configurations and certifies the next configuration as the
join of everything concurrently proposed. The second runs over sets of
configurations and extends the history with that output; its inputs are only
accepted when backed by a first-agreement certificate, so every element of a
certified history is itself a certified configuration. The resulting history
certificate is broadcast, and adoption drives key updates, state transfer
and installation in the replica core.

Both agreements are pre-seeded with genesis under a distinguished
certificate, which makes every output contain the initial configuration and
lets certificate verification ground out without external trust.
"""

from __future__ import annotations

from .dbla import (
    GENESIS_CERT,
    ClientHub,
    DblaClient,
    DblaStore,
    DynamicObject,
    DynamicReplica,
    InputValue,
    OutputCert,
    accept_all,
    verify_output,
)
from .lattice import Config, ConfSet, History


def wrap_conf_cert(tc: OutputCert) -> dict:
    return {"kind": "confout", "oc": tc.to_jsonable()}


def make_hist_input_check(conf_obj: DynamicObject, oracle):
    """History-agreement inputs: singleton sets of certified configurations."""

    def check(value, cert) -> bool:
        if not isinstance(value, ConfSet) or len(value.confs) != 1:
            return False
        if not isinstance(cert, dict) or cert.get("kind") != "confout":
            return False
        try:
            tc = OutputCert.from_jsonable(cert["oc"])
        except (KeyError, TypeError, ValueError, AttributeError):
            return False
        (config,) = tuple(value.confs)
        return verify_output(conf_obj, oracle, config, tc)

    return check


class ReconfigGroup:
    """Shared wiring for one reconfigurable object group."""

    def __init__(self, group: str, genesis: Config, oracle, conf_input_check=None):
        self.group = group
        self.genesis = genesis
        self.oracle = oracle
        self.conf_obj = DynamicObject(
            f"{group}/conf",
            genesis,
            check_value=conf_input_check or accept_all,
            genesis_values=[InputValue(genesis, GENESIS_CERT)],
        )
        self.hist_obj = DynamicObject(
            f"{group}/hist",
            genesis,
            genesis_values=[InputValue(ConfSet({genesis}), GENESIS_CERT)],
        )
        self.hist_obj.set_check_value(make_hist_input_check(self.conf_obj, oracle))
        self.view_obj = DynamicObject(f"{group}/view", genesis, check_history=self._check_history_cert)
        self.govern(self.conf_obj)
        self.govern(self.hist_obj)

    def _check_history_cert(self, h: History, cert) -> bool:
        if not isinstance(cert, OutputCert):
            return False
        return verify_output(self.hist_obj, self.oracle, h.as_confset(), cert)

    def govern(self, obj: DynamicObject) -> None:
        """Make this group's histories the ones the object trusts."""
        obj.set_check_history(self._check_history_cert)

    def check_history(self, h: History, cert) -> bool:
        return self.view_obj.check_history(h, cert)

    def make_replica(self, roster, extra_stores=()) -> DynamicReplica:
        stores = [DblaStore("conf", self.conf_obj), DblaStore("hist", self.hist_obj), *extra_stores]
        return DynamicReplica(self.group, self.genesis, stores, self.check_history, roster)

    def make_hub(self, roster) -> ClientHub:
        return ClientHub(self.group, self.view_obj, roster)


class ReconfigClient:
    """Drives one configuration update through both agreements."""

    def __init__(self, hub: ClientHub, grp: ReconfigGroup):
        self.hub = hub
        self.grp = grp
        self.conf = DblaClient(hub, grp.conf_obj)
        self.hist = DblaClient(hub, grp.hist_obj)
        self._done = None

    def busy(self) -> bool:
        return self.conf.busy() or self.hist.busy()

    def update_config(self, config: Config, cert, done) -> None:
        if self.busy():
            raise RuntimeError("one update_config at a time per client")
        self._done = done
        self.conf.propose(config, cert, self._conf_done)

    def _conf_done(self, cprime: Config, tc: OutputCert) -> None:
        self.hist.propose(ConfSet({cprime}), wrap_conf_cert(tc), self._hist_done)

    def _hist_done(self, hset: ConfSet, th: OutputCert) -> None:
        h = History.try_build(hset.confs)
        if h is None:
            raise RuntimeError("certified configurations are not pairwise ordered")
        done, self._done = self._done, None
        self.hub.update_history(h, th, done=lambda: done(h, th))
