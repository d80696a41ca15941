"""MATPOWER case parsing and the network structures derived from it.

Only the ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen`` and ``mpc.branch`` blocks
are read. Each block is a whitespace separated numeric matrix between ``[``
and ``];`` with ``%`` comments. Columns beyond the ones listed below are
ignored, and so are all other blocks (``mpc.gencost``, ``mpc.bus_name``, ...).

    bus:    bus_i type Pd Qd Gs Bs area Vm Va [baseKV zone Vmax Vmin ...]
    gen:    bus Pg Qg Qmax Qmin Vg mBase status [...]
    branch: fbus tbus r x b rateA rateB rateC ratio angle status [...]

Internal bus indices are dense, 0-based and follow file order; the
external bus numbers are kept on each :class:`Bus` and in ``Network.index``.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    DisconnectedGraph,
    IndexOutOfRange,
    MalformedRow,
    MissingBlock,
    MultipleSlack,
    NoSlack,
    ZeroImpedanceBranch,
)

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_BASEMVA_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n]+);")
_MIN_COLS = {"bus": 9, "gen": 8, "branch": 11}


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


_KIND_FROM_CODE = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK, 4: BusKind.PQ}
_CODE_FROM_KIND = {BusKind.PQ: 1, BusKind.PV: 2, BusKind.SLACK: 3}


@dataclass(frozen=True)
class Bus:
    """One bus. Loads in MW/MVAr; shunts in MW/MVAr drawn at 1.0 pu."""

    id: int
    kind: BusKind
    base_p_load: float
    base_q_load: float
    base_v_mag: float
    base_v_ang: float = 0.0  # degrees, informational only
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    gen_p: float | None = None
    gen_q_limits: tuple[float, float] | None = None  # (qmin, qmax)
    gen_v_set: float | None = None

    @property
    def has_gen(self):
        return self.gen_p is not None

    @property
    def has_load(self):
        return self.base_p_load != 0.0 or self.base_q_load != 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    shift_deg: float = 0.0  # kept in file units so text round-trips exactly
    status: bool = True

    @property
    def phase_shift(self):
        """Phase shift in radians."""
        return math.radians(self.shift_deg)


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    source: str = field(default="", compare=False)

    def __post_init__(self):
        _validate(self)

    @property
    def n_bus(self):
        return len(self.buses)

    @cached_property
    def index(self) -> dict[int, int]:
        """External bus number -> internal 0-based index."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PV], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ], dtype=int)

    @cached_property
    def adjacency(self) -> tuple[frozenset, ...]:
        nbrs = [set() for _ in self.buses]
        for br in self.branches:
            if not br.status:
                continue
            f, t = self.index[br.from_bus], self.index[br.to_bus]
            nbrs[f].add(t)
            nbrs[t].add(f)
        return tuple(frozenset(s) for s in nbrs)

    @cached_property
    def ybus(self) -> sp.csr_matrix:
        return build_ybus(self)

    @cached_property
    def load_bus_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.buses) if b.has_load)

    @cached_property
    def base_load_pu(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.array([b.base_p_load for b in self.buses]) / self.base_mva
        q = np.array([b.base_q_load for b in self.buses]) / self.base_mva
        return p, q

    @cached_property
    def gen_p_pu(self) -> np.ndarray:
        return np.array([b.gen_p or 0.0 for b in self.buses]) / self.base_mva

    @cached_property
    def v_setpoint(self) -> np.ndarray:
        """Voltage magnitude held at slack/PV buses (generator setpoint)."""
        return np.array(
            [b.gen_v_set if b.gen_v_set is not None else b.base_v_mag for b in self.buses]
        )

    def bus_index(self, bus_id):
        try:
            return self.index[bus_id]
        except KeyError:
            raise IndexOutOfRange(f"no bus with external id {bus_id}") from None

    def to_dict(self):
        return {
            "source": self.source,
            "base_mva": self.base_mva,
            "slack": self.slack,
            "buses": [_bus_dict(b) for b in self.buses],
            "branches": [asdict(br) for br in self.branches],
            "adjacency": [sorted(a) for a in self.adjacency],
            "load_bus_indices": list(self.load_bus_indices),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _bus_dict(b):
    d = asdict(b)
    d["kind"] = b.kind.value
    return d


def _validate(net):
    n_slack = sum(b.kind is BusKind.SLACK for b in net.buses)
    if n_slack == 0:
        raise NoSlack("network has no slack bus")
    if n_slack > 1:
        raise MultipleSlack(f"network has {n_slack} slack buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise MalformedRow("bus", 0, "duplicate bus numbers")
    known = set(ids)
    for b in net.buses:
        if not b.base_v_mag > 0:
            raise MalformedRow("bus", b.id, "non-positive voltage magnitude")
        if b.kind is BusKind.PQ and b.has_gen:
            raise MalformedRow("gen", b.id, "generator attached to a PQ bus")
    for br in net.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise MalformedRow("branch", 0, f"unknown bus in {br.from_bus}-{br.to_bus}")
        if br.from_bus == br.to_bus:
            raise MalformedRow("branch", 0, f"self-loop at bus {br.from_bus}")
        if br.r == 0.0 and br.x == 0.0:
            raise ZeroImpedanceBranch(br.from_bus, br.to_bus)
    n = len(ids)
    index = {b: i for i, b in enumerate(ids)}
    rows, cols = [], []
    for br in net.branches:
        if br.status:
            rows.append(index[br.from_bus])
            cols.append(index[br.to_bus])
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp != 1:
        raise DisconnectedGraph(f"in-service branches form {n_comp} islands")


# -- parsing ------------------------------------------------------------------


def _parse_block(text, name, match):
    body = match.group(2)
    first_line = text.count("\n", 0, match.start(2)) + 1
    rows = []
    for k, raw in enumerate(body.split("\n")):
        line = raw.split("%", 1)[0]
        for chunk in line.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                vals = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError:
                raise MalformedRow(name, first_line + k, "non-numeric entry") from None
            if len(vals) < _MIN_COLS[name]:
                raise MalformedRow(
                    name, first_line + k, f"expected >= {_MIN_COLS[name]} columns, got {len(vals)}"
                )
            rows.append((first_line + k, vals))
    return rows


def parse_case(text: str, source: str = "") -> Network:
    """Parse MATPOWER case text into a validated :class:`Network`."""
    blocks = {}
    for m in _BLOCK_RE.finditer(text):
        name = m.group(1)
        if name in _MIN_COLS:
            blocks[name] = _parse_block(text, name, m)
        else:
            log.info("ignoring mpc.%s block", name)
    mva = _BASEMVA_RE.search(text)
    if mva is None:
        raise MissingBlock("baseMVA")
    for name in ("bus", "gen", "branch"):
        if name not in blocks:
            raise MissingBlock(name)
    try:
        base_mva = float(mva.group(1).split("%")[0])
    except ValueError:
        raise MalformedRow("baseMVA", text.count("\n", 0, mva.start()) + 1) from None

    # aggregate in-service generators per bus
    gens = {}
    for line, g in blocks["gen"]:
        if g[7] <= 0:
            continue
        bid = int(g[0])
        if bid in gens:
            p, qmin, qmax, vset = gens[bid]
            gens[bid] = (p + g[1], qmin + g[4], qmax + g[3], vset)
        else:
            gens[bid] = (g[1], g[4], g[3], g[5])

    buses, demoted = [], []
    for line, row in blocks["bus"]:
        bid, code = int(row[0]), int(row[1])
        if code not in _KIND_FROM_CODE:
            raise MalformedRow("bus", line, f"unknown bus type {code}")
        kind = _KIND_FROM_CODE[code]
        gen = gens.pop(bid, None)
        if kind is BusKind.PV and gen is None:
            demoted.append(bid)
            kind = BusKind.PQ
        if kind is BusKind.PQ and gen is not None:
            raise MalformedRow("gen", line, f"in-service generator at PQ bus {bid}")
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                base_p_load=row[2],
                base_q_load=row[3],
                base_v_mag=row[7],
                base_v_ang=row[8],
                shunt_g=row[4],
                shunt_b=row[5],
                gen_p=None if gen is None else gen[0],
                gen_q_limits=None if gen is None else (gen[1], gen[2]),
                gen_v_set=None if gen is None else gen[3],
            )
        )
    if demoted:
        log.warning("%d PV buses without in-service generators treated as PQ: %s", len(demoted), demoted)
    if gens:
        raise MalformedRow("gen", 0, f"generator at unknown bus {next(iter(gens))}")

    branches = []
    for line, row in blocks["branch"]:
        f, t = int(row[0]), int(row[1])
        if f == t:
            raise MalformedRow("branch", line, f"self-loop at bus {f}")
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap_ratio=row[8] if row[8] != 0.0 else 1.0,
                shift_deg=row[9],
                status=row[10] > 0,
            )
        )
    return Network(tuple(buses), tuple(branches), base_mva, source=source)


def load_case(path) -> Network:
    """Read a case file. Bare names such as ``case118`` resolve to bundled data."""
    p = Path(path)
    if not p.exists():
        cand = DATA_DIR / (p.name if p.suffix == ".m" else p.name + ".m")
        if cand.exists():
            p = cand
    return parse_case(p.read_text(), source=p.name)


def to_case_text(net: Network) -> str:
    """Canonical MATPOWER text; ``parse_case(to_case_text(net)) == net``."""
    r = repr
    out = ["function mpc = case_canonical", "mpc.version = '2';", f"mpc.baseMVA = {r(net.base_mva)};", ""]
    out.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa")
    out.append("mpc.bus = [")
    for b in net.buses:
        vals = [b.id, _CODE_FROM_KIND[b.kind], r(b.base_p_load), r(b.base_q_load),
                r(b.shunt_g), r(b.shunt_b), 1, r(b.base_v_mag), r(b.base_v_ang)]
        out.append("\t" + "\t".join(map(str, vals)) + ";")
    out += ["];", "", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus", "mpc.gen = ["]
    for b in net.buses:
        if b.has_gen:
            qmin, qmax = b.gen_q_limits
            vals = [b.id, r(b.gen_p), 0, r(qmax), r(qmin), r(b.gen_v_set), r(net.base_mva), 1]
            out.append("\t" + "\t".join(map(str, vals)) + ";")
    out += ["];", "", "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus", "mpc.branch = ["]
    for br in net.branches:
        vals = [br.from_bus, br.to_bus, r(br.r), r(br.x), r(br.b_charging), 0, 0, 0,
                r(br.tap_ratio), r(br.shift_deg), int(br.status)]
        out.append("\t" + "\t".join(map(str, vals)) + ";")
    out += ["];", ""]
    return "\n".join(out)


# -- graph / admittance -------------------------------------------------------


def neighborhood(net: Network, j: int) -> frozenset:
    """Bus ``j`` together with its direct neighbours (internal indices)."""
    if not 0 <= j < net.n_bus:
        raise IndexOutOfRange(f"bus index {j} outside [0, {net.n_bus})")
    return net.adjacency[j] | {j}


def build_ybus(net: Network) -> sp.csr_matrix:
    """Bus admittance matrix from the pi-model of every in-service branch."""
    n = net.n_bus
    on = [br for br in net.branches if br.status]
    f = np.array([net.index[br.from_bus] for br in on], dtype=int)
    t = np.array([net.index[br.to_bus] for br in on], dtype=int)
    ys = 1.0 / np.array([complex(br.r, br.x) for br in on])
    bc = np.array([br.b_charging for br in on])
    tap = np.array([br.tap_ratio * np.exp(1j * br.phase_shift) for br in on])

    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap

    ysh = np.array([complex(b.shunt_g, b.shunt_b) for b in net.buses]) / net.base_mva
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    vals = np.concatenate([yff, yft, ytf, ytt, ysh])
    # duplicate (row, col) pairs, e.g. parallel branches, are summed
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
