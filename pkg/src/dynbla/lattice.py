"""Join semi-lattices, configurations, quorums, histories.

Also home of the canonical byte encoding used for signing payloads, message
hashing and value dedup: every encodable value maps to one byte string,
independent of dict/set iteration order.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

ADD = "+"
REMOVE = "-"

_CANON_VERSION = b"1"


def _frame(tag: bytes, payload: bytes) -> bytes:
    return tag + len(payload).to_bytes(4, "big") + payload


def canon(x) -> bytes:
    """Deterministic tag-length-value encoding. Dict keys must be strings."""
    if x is None:
        return _frame(b"N", b"")
    if isinstance(x, bool):
        return _frame(b"B", b"\x01" if x else b"\x00")
    if isinstance(x, int):
        return _frame(b"I", str(x).encode())
    if isinstance(x, str):
        return _frame(b"S", x.encode("utf-8"))
    if isinstance(x, bytes):
        return _frame(b"Y", x)
    if isinstance(x, (list, tuple)):
        return _frame(b"L", b"".join(canon(e) for e in x))
    if isinstance(x, (set, frozenset)):
        return _frame(b"E", b"".join(sorted(canon(e) for e in x)))
    if isinstance(x, dict):
        body = b"".join(canon(k) + canon(v) for k, v in sorted(x.items()))
        return _frame(b"D", body)
    enc = getattr(x, "canon", None)
    if enc is not None:
        return enc()
    raise TypeError(f"not canonically encodable: {type(x).__name__}")


def digest(x) -> str:
    return hashlib.sha256(_CANON_VERSION + canon(x)).hexdigest()


def short_digest(x) -> str:
    return digest(x)[:12]


def quorum_size(n: int) -> int:
    """Smallest group size strictly greater than two thirds of n."""
    return (2 * n) // 3 + 1


def fault_budget(n: int) -> int:
    return (n - 1) // 3


class FinSet:
    """Powerset lattice over opaque string ids."""

    __slots__ = ("elems", "_canon")

    def __init__(self, elems: Iterable[str] = ()):
        self.elems = frozenset(elems)
        self._canon = None

    def join(self, other: "FinSet") -> "FinSet":
        return FinSet(self.elems | other.elems)

    def leq(self, other: "FinSet") -> bool:
        return self.elems <= other.elems

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = _frame(b"F", b"".join(canon(e) for e in sorted(self.elems)))
        return self._canon

    def bottom(self) -> "FinSet":
        return FinSet()

    def to_jsonable(self):
        return {"set": sorted(self.elems)}

    @classmethod
    def from_jsonable(cls, data) -> "FinSet":
        return cls(data["set"])

    def __eq__(self, other):
        return isinstance(other, FinSet) and self.elems == other.elems

    def __hash__(self):
        return hash(self.elems)

    def __repr__(self):
        return f"FinSet({sorted(self.elems)})"


class Config:
    """A configuration: a set of (+id / -id) updates.

    Active replicas are the added-and-never-removed ids; a remove update wins
    over any add of the same id forever, so removed ids cannot come back.
    """

    __slots__ = ("updates", "_canon", "_replicas")

    def __init__(self, updates: Iterable[tuple[str, str]] = ()):
        ups = frozenset((str(op), str(r)) for op, r in updates)
        for op, _ in ups:
            if op not in (ADD, REMOVE):
                raise ValueError(f"bad update kind {op!r}")
        self.updates = ups
        self._canon = None
        self._replicas = None

    def join(self, other: "Config") -> "Config":
        return Config(self.updates | other.updates)

    def leq(self, other: "Config") -> bool:
        return self.updates <= other.updates

    def replicas(self) -> frozenset[str]:
        if self._replicas is None:
            removed = {r for op, r in self.updates if op == REMOVE}
            self._replicas = frozenset(
                r for op, r in self.updates if op == ADD and r not in removed
            )
        return self._replicas

    def height(self) -> int:
        return len(self.updates)

    def quorum_size(self) -> int:
        return quorum_size(len(self.replicas()))

    def fault_budget(self) -> int:
        return fault_budget(len(self.replicas()))

    def is_quorum(self, group: Iterable[str]) -> bool:
        g = set(group)
        return g <= self.replicas() and len(g) >= self.quorum_size()

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = _frame(
                b"C", b"".join(sorted(canon(list(u)) for u in self.updates))
            )
        return self._canon

    def bottom(self) -> "Config":
        return Config()

    def cid(self) -> str:
        return short_digest(self)

    def to_jsonable(self):
        return {"cfg": sorted(list(u) for u in self.updates)}

    @classmethod
    def from_jsonable(cls, data) -> "Config":
        return cls(tuple(u) for u in data["cfg"])

    def __eq__(self, other):
        return isinstance(other, Config) and self.updates == other.updates

    def __hash__(self):
        return hash(self.updates)

    def __repr__(self):
        return f"Config(h={self.height()}, replicas={sorted(self.replicas())})"


class ConfSet:
    """Powerset lattice over configurations (the history-agreement lattice)."""

    __slots__ = ("confs", "_canon")

    def __init__(self, confs: Iterable[Config] = ()):
        self.confs = frozenset(confs)
        self._canon = None

    def join(self, other: "ConfSet") -> "ConfSet":
        return ConfSet(self.confs | other.confs)

    def leq(self, other: "ConfSet") -> bool:
        return self.confs <= other.confs

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = _frame(b"H", b"".join(sorted(c.canon() for c in self.confs)))
        return self._canon

    def bottom(self) -> "ConfSet":
        return ConfSet()

    def to_jsonable(self):
        return {"cfgs": sorted((c.to_jsonable()["cfg"] for c in self.confs))}

    @classmethod
    def from_jsonable(cls, data) -> "ConfSet":
        return cls(Config(tuple(u) for u in ups) for ups in data["cfgs"])

    def __eq__(self, other):
        return isinstance(other, ConfSet) and self.confs == other.confs

    def __hash__(self):
        return hash(self.confs)

    def __repr__(self):
        return f"ConfSet({sorted(c.cid() for c in self.confs)})"


class History:
    """A nonempty set of pairwise comparable configurations, kept sorted."""

    __slots__ = ("configs", "_canon")

    def __init__(self, configs: Iterable[Config]):
        confs = sorted(set(configs), key=lambda c: (c.height(), c.canon()))
        if not confs:
            raise ValueError("history must be nonempty")
        for lo, hi in zip(confs, confs[1:]):
            if not lo.leq(hi):
                raise ValueError("history configurations must be pairwise comparable")
        self.configs = tuple(confs)
        self._canon = None

    @classmethod
    def try_build(cls, configs: Iterable[Config]) -> "History | None":
        try:
            return cls(configs)
        except ValueError:
            return None

    def max_element(self) -> Config:
        return self.configs[-1]

    def as_confset(self) -> ConfSet:
        return ConfSet(self.configs)

    def contained_in(self, other: "History") -> bool:
        return set(self.configs) <= set(other.configs)

    def contains(self, config: Config) -> bool:
        return config in set(self.configs)

    def canon(self) -> bytes:
        if self._canon is None:
            self._canon = self.as_confset().canon()
        return self._canon

    def to_jsonable(self):
        return {"hist": [c.to_jsonable()["cfg"] for c in self.configs]}

    @classmethod
    def from_jsonable(cls, data) -> "History":
        return cls(Config(tuple(u) for u in ups) for ups in data["hist"])

    def __eq__(self, other):
        return isinstance(other, History) and self.configs == other.configs

    def __hash__(self):
        return hash(self.configs)

    def __len__(self):
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __repr__(self):
        return f"History({[c.height() for c in self.configs]})"


def genesis_config(replicas: Iterable[str]) -> Config:
    return Config((ADD, r) for r in replicas)


VALUE_KINDS = {"set": FinSet, "cfg": Config, "cfgs": ConfSet, "hist": History}


def value_to_jsonable(v):
    if isinstance(v, (int, str)) and not isinstance(v, bool):
        return v
    if v is None:
        return None
    return v.to_jsonable()


def value_from_jsonable(data):
    if data is None or isinstance(data, (int, str)):
        return data
    for key, cls in VALUE_KINDS.items():
        if key in data:
            return cls.from_jsonable(data)
    raise ValueError(f"unknown value encoding: {data!r}")
