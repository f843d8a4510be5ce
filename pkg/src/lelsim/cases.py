"""Sectioned-CSV grid case format and bundled test systems.

A case file holds SYSTEM / BUS / BRANCH / GEN / LEL sections::

    [SYSTEM]
    s_base,100.0
    f_base,60.0
    [BUS]
    # id,type,v_set,p_load_mw,q_load_mvar
    1,slack,1.04,0,0
    [BRANCH]
    # from,to,r,x,b_shunt[,tap]
    1,2,0.01,0.1,0.02
    [GEN]
    # bus,h,d,xd_p,p_set_mw,v_set
    1,5.0,50.0,0.2,0,1.04
    [LEL]
    # bus,archetype[,work_share,cool_share,aux_share]
    2,datacenter,0.6,0.3,0.1

All impedances are pu on s_base; loads and generator schedules are in
MW/MVAr.  Shares default to the 60/30/10 workload/cooling/auxiliary
split of the bus demand.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np

from lelsim.errors import ValidationError
from lelsim.lel import Archetype, LelParams, archetype_defaults

DEFAULT_SHARES = (0.6, 0.3, 0.1)


@dataclass(frozen=True)
class Bus:
    id: int
    type: str            # slack | pv | pq
    v_set: float
    p_load: float        # MW
    q_load: float        # MVAr


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float
    tap: float = 1.0


@dataclass(frozen=True)
class Generator:
    bus: int
    H: float             # s on s_base
    D: float             # pu damping on s_base
    xd_p: float          # pu transient reactance
    p_set: float         # MW (ignored for the slack machine)
    v_set: float


@dataclass(frozen=True)
class LelPlacement:
    bus: int
    params: LelParams
    shares: tuple[float, float, float] = DEFAULT_SHARES


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    lels: tuple[LelPlacement, ...] = ()
    s_base: float = 100.0
    f_base: float = 60.0
    name: str = ""

    def __post_init__(self):
        validate_case(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def with_lels(self, lels) -> "GridCase":
        return replace(self, lels=tuple(lels))


def validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    idset = set(ids)
    slacks = [b for b in case.buses if b.type == "slack"]
    if len(slacks) != 1:
        raise ValidationError(f"case must have exactly one slack bus, found {len(slacks)}")
    for b in case.buses:
        if b.type not in ("slack", "pv", "pq"):
            raise ValidationError(f"bus {b.id}: unknown type {b.type!r}")
    for br in case.branches:
        if br.from_bus not in idset or br.to_bus not in idset:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: unknown bus")
        if br.r == 0 and br.x == 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: zero impedance")
    by_id = {b.id: b for b in case.buses}
    gen_buses = [g.bus for g in case.generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise ValidationError("at most one generator per bus")
    for g in case.generators:
        if g.bus not in idset:
            raise ValidationError(f"generator at unknown bus {g.bus}")
        if by_id[g.bus].type not in ("pv", "slack"):
            raise ValidationError(f"generator bus {g.bus} must be PV or slack")
    pv_or_slack = {b.id for b in case.buses if b.type in ("pv", "slack")}
    if pv_or_slack - set(gen_buses):
        raise ValidationError("every PV/slack bus needs a generator")
    lel_buses = [p.bus for p in case.lels]
    if len(set(lel_buses)) != len(lel_buses):
        raise ValidationError("at most one LEL per bus")
    for p in case.lels:
        if p.bus not in idset:
            raise ValidationError(f"LEL at unknown bus {p.bus}")
        if by_id[p.bus].type != "pq":
            raise ValidationError(f"LEL bus {p.bus} must be PQ")
        if abs(sum(p.shares) - 1.0) > 1e-9 or min(p.shares) < 0:
            raise ValidationError(f"LEL bus {p.bus}: shares must be >= 0 and sum to 1")
    # connectivity
    if case.branches or len(case.buses) > 1:
        idx = {bid: k for k, bid in enumerate(ids)}
        n = len(ids)
        seen = np.zeros(n, dtype=bool)
        adj = [[] for _ in range(n)]
        for br in case.branches:
            adj[idx[br.from_bus]].append(idx[br.to_bus])
            adj[idx[br.to_bus]].append(idx[br.from_bus])
        stack = [0]
        seen[0] = True
        while stack:
            k = stack.pop()
            for j in adj[k]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        if not seen.all():
            missing = [ids[k] for k in np.flatnonzero(~seen)]
            raise ValidationError(f"disconnected bus(es): {missing}")


def load_case(path_or_text, name: str = "") -> GridCase:
    """Parse a sectioned-CSV case document (path, file object, or text)."""
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    elif isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
        name = name or str(path_or_text)

    sections: dict[str, list[list[str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].upper()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ValidationError(f"line {lineno}: data before any section header")
        sections[current].append([tok.strip() for tok in line.split(",")])

    for required in ("BUS", "GEN"):
        if required not in sections or not sections[required]:
            raise ValidationError(f"case is missing a [{required}] section")

    system = {row[0]: float(row[1]) for row in sections.get("SYSTEM", [])}
    s_base = system.get("s_base", 100.0)
    f_base = system.get("f_base", 60.0)

    buses = []
    for row in sections["BUS"]:
        if len(row) != 5:
            raise ValidationError(f"[BUS] row needs 5 fields: {row}")
        buses.append(Bus(id=int(row[0]), type=row[1].lower(), v_set=float(row[2]),
                         p_load=float(row[3]), q_load=float(row[4])))
    branches = []
    for row in sections.get("BRANCH", []):
        if len(row) not in (5, 6):
            raise ValidationError(f"[BRANCH] row needs 5 or 6 fields: {row}")
        tap = float(row[5]) if len(row) == 6 and row[5] else 1.0
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]), r=float(row[2]),
                               x=float(row[3]), b_shunt=float(row[4]),
                               tap=tap if tap != 0.0 else 1.0))
    gens = []
    for row in sections["GEN"]:
        if len(row) != 6:
            raise ValidationError(f"[GEN] row needs 6 fields: {row}")
        gens.append(Generator(bus=int(row[0]), H=float(row[1]), D=float(row[2]),
                              xd_p=float(row[3]), p_set=float(row[4]), v_set=float(row[5])))
    lels = []
    for row in sections.get("LEL", []):
        if len(row) not in (2, 5):
            raise ValidationError(f"[LEL] row needs 2 or 5 fields: {row}")
        archetype = Archetype(row[1].lower())
        shares = DEFAULT_SHARES if len(row) == 2 else tuple(float(v) for v in row[2:5])
        lels.append(LelPlacement(bus=int(row[0]), params=archetype_defaults(archetype),
                                 shares=shares))
    return GridCase(buses=tuple(buses), branches=tuple(branches), generators=tuple(gens),
                    lels=tuple(lels), s_base=s_base, f_base=f_base, name=name)


def bundled_case(name: str) -> GridCase:
    """Load one of the bundled fixtures: ieee39, toy9, toy2."""
    ref = importlib.resources.files("lelsim.data").joinpath(f"{name}.case")
    try:
        text = ref.read_text()
    except FileNotFoundError as exc:
        raise ValidationError(f"no bundled case named {name!r}") from exc
    return load_case(text, name=name)
