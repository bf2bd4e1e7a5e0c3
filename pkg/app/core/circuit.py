"""
Circuit core: 5-device, 13-port converter topologies.

Port layout (fixed):
    0 -> external "0" (ground), 1 -> "IN", 2 -> "OUT"
    device k (0..4) owns ports 3+2k (port 1) and 4+2k (port 2)

A net is identified by its representative, the minimum port id in it, so
external names win ties deterministically (ground beats IN beats OUT).
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from itertools import chain, permutations, product
from typing import Iterable, Mapping, NewType, Sequence

import networkx as nx
import numpy as np

from app.core.errors import MalformedTopology


class DeviceKind(str, Enum):
    C = "C"
    L = "L"
    SA = "Sa"
    SB = "Sb"


KIND_ORDER: tuple[DeviceKind, ...] = (DeviceKind.C, DeviceKind.L, DeviceKind.SA, DeviceKind.SB)

N_DEVICES = 5
N_PORTS = 3 + 2 * N_DEVICES
GROUND, IN, OUT = 0, 1, 2
EXTERNAL_NAMES: tuple[str, ...] = ("0", "IN", "OUT")

CanonicalKey = NewType("CanonicalKey", bytes)


def device_port(device: int, pin: int) -> int:
    """Port id of `pin` (1 or 2) on device index `device`."""
    return 3 + 2 * device + (pin - 1)


def port_owner(port: int) -> tuple[int, int]:
    """Inverse of device_port: (device index, pin) for a device port."""
    if port < 3 or port >= N_PORTS:
        raise ValueError(f"port {port} is not a device port")
    return (port - 3) // 2, (port - 3) % 2 + 1


@dataclass(frozen=True)
class ComponentPool:
    """Ordered list of exactly 5 device kinds."""
    kinds: tuple[DeviceKind, ...]

    def __post_init__(self):
        kinds = tuple(DeviceKind(k) for k in self.kinds)
        if len(kinds) != N_DEVICES:
            raise MalformedTopology(f"component pool needs {N_DEVICES} devices, got {len(kinds)}")
        object.__setattr__(self, "kinds", kinds)

    @classmethod
    def parse(cls, text: str) -> "ComponentPool":
        """Parse a comma-separated pool such as 'C,C,L,Sa,Sb'."""
        try:
            return cls(tuple(DeviceKind(part.strip()) for part in text.split(",")))
        except ValueError as e:
            raise MalformedTopology(f"bad component pool {text!r}: {e}") from e

    @cached_property
    def instance_names(self) -> tuple[str, ...]:
        counts: dict[DeviceKind, int] = {}
        names = []
        for kind in self.kinds:
            index = counts.get(kind, 0)
            counts[kind] = index + 1
            names.append(f"{kind.value}{index}")
        return tuple(names)

    def device_index(self, instance: str) -> int:
        try:
            return self.instance_names.index(instance)
        except ValueError:
            raise KeyError(instance) from None

    def port_label(self, port: int) -> str:
        """Human-readable port description, e.g. 'IN' or 'C0.2'."""
        if port < 3:
            return EXTERNAL_NAMES[port]
        device, pin = port_owner(port)
        return f"{self.instance_names[device]}.{pin}"

    def __str__(self) -> str:
        return ",".join(k.value for k in self.kinds)


@dataclass(frozen=True)
class Topology:
    """Assignment of the 13 ports to nets; net_of[p] is the representative of p's net."""
    pool: ComponentPool
    net_of: tuple[int, ...]

    def __post_init__(self):
        net_of = tuple(int(n) for n in self.net_of)
        if len(net_of) != N_PORTS:
            raise MalformedTopology(f"expected {N_PORTS} ports, got {len(net_of)}")
        for port, rep in enumerate(net_of):
            if not 0 <= rep <= port:
                raise MalformedTopology(f"port {port} has representative {rep} > port")
            if net_of[rep] != rep:
                raise MalformedTopology(f"representative {rep} of port {port} is not a fixed point")
        object.__setattr__(self, "net_of", net_of)

    @cached_property
    def nets(self) -> dict[int, tuple[int, ...]]:
        """Representative -> member ports, in representative order."""
        groups: dict[int, list[int]] = {}
        for port, rep in enumerate(self.net_of):
            groups.setdefault(rep, []).append(port)
        return {rep: tuple(members) for rep, members in sorted(groups.items())}

    def device_nets(self, device: int) -> tuple[int, int]:
        return self.net_of[device_port(device, 1)], self.net_of[device_port(device, 2)]

    def describe(self) -> str:
        return "; ".join(
            "{" + ",".join(self.pool.port_label(p) for p in members) + "}"
            for members in self.nets.values()
        )


@dataclass(frozen=True)
class ScreenResult:
    connected: bool


def topology_from_groups(pool: ComponentPool, groups: Iterable[Iterable[int]]) -> Topology:
    """Build a Topology from port groups; ports not mentioned become singleton nets."""
    net_of = list(range(N_PORTS))
    seen: set[int] = set()
    for group in groups:
        members = sorted(set(group))
        if not members:
            continue
        for port in members:
            if not 0 <= port < N_PORTS:
                raise MalformedTopology(f"port {port} out of range")
            if port in seen:
                raise MalformedTopology(f"port {port} appears in two nets")
            seen.add(port)
        rep = members[0]
        for port in members:
            net_of[port] = rep
    return Topology(pool, tuple(net_of))


def new_topology(pool: ComponentPool, assignment: Mapping[int, int]) -> Topology:
    """Build a Topology from a port -> net-label map; labels must be ports of their own net."""
    ports = set(assignment)
    expected = set(range(N_PORTS))
    if ports != expected:
        missing = sorted(expected - ports)
        extra = sorted(ports - expected)
        raise MalformedTopology(f"assignment must cover ports 0..12 (missing={missing}, extra={extra})")
    groups: dict[int, list[int]] = {}
    for port, label in assignment.items():
        groups.setdefault(label, []).append(port)
    for label in groups:
        if assignment.get(label) != label:
            raise MalformedTopology(f"net label {label} is not a member of its own net")
    return topology_from_groups(pool, groups.values())


def _relabel(seq: Sequence[int]) -> tuple[int, ...]:
    labels: dict[int, int] = {}
    return tuple(labels.setdefault(x, len(labels)) for x in seq)


def canonicalize(t: Topology) -> CanonicalKey:
    """Key invariant under identical-instance permutation, port swaps and net renaming.

    Devices are first ordered by kind so that two orderings of the same pool
    multiset give the same key; the key is the lexicographic minimum of the
    relabelled port sequence over the whole symmetry group.
    """
    order = sorted(range(N_DEVICES), key=lambda k: (KIND_ORDER.index(t.pool.kinds[k]), k))
    blocks: list[list[int]] = []
    for device in order:
        if blocks and t.pool.kinds[blocks[-1][0]] == t.pool.kinds[device]:
            blocks[-1].append(device)
        else:
            blocks.append([device])

    pins = [t.device_nets(k) for k in range(N_DEVICES)]
    head = t.net_of[:3]
    best: tuple[int, ...] | None = None
    for arrangement in product(*(permutations(block) for block in blocks)):
        devices = list(chain.from_iterable(arrangement))
        for swaps in product((False, True), repeat=N_DEVICES):
            seq = list(head)
            for device, swap in zip(devices, swaps):
                a, b = pins[device]
                seq.extend((b, a) if swap else (a, b))
            candidate = _relabel(seq)
            if best is None or candidate < best:
                best = candidate
    kinds = ",".join(t.pool.kinds[k].value for k in order)
    return CanonicalKey(kinds.encode() + b"|" + bytes(best))


def apply_symmetry(t: Topology, permutation: Sequence[int], swaps: Sequence[bool]) -> Topology:
    """Relabel device instances and swap ports; permutation must preserve device kinds.

    New device i takes the connections of old device permutation[i].
    """
    for i, j in enumerate(permutation):
        if t.pool.kinds[i] != t.pool.kinds[j]:
            raise MalformedTopology("symmetry permutation must map instances of the same kind")
    labels = list(t.net_of[:3])
    for i, (old, swap) in enumerate(zip(permutation, swaps)):
        a, b = t.device_nets(old)
        labels.extend((b, a) if swap else (a, b))
    groups: dict[int, list[int]] = {}
    for port, label in enumerate(labels):
        groups.setdefault(label, []).append(port)
    return topology_from_groups(t.pool, groups.values())


def random_symmetry(pool: ComponentPool, rng: np.random.Generator) -> tuple[list[int], list[bool]]:
    """Draw a random element of the pool's symmetry group."""
    permutation = list(range(N_DEVICES))
    for kind in KIND_ORDER:
        members = [k for k in range(N_DEVICES) if pool.kinds[k] == kind]
        shuffled = list(rng.permutation(members))
        for slot, device in zip(members, shuffled):
            permutation[slot] = int(device)
    swaps = [bool(s) for s in rng.integers(0, 2, size=N_DEVICES)]
    return permutation, swaps


def device_graph(t: Topology) -> nx.MultiGraph:
    """Nets as vertices, the 5 devices as edges (phases merged)."""
    graph = nx.MultiGraph()
    graph.add_nodes_from(t.nets)
    for device in range(N_DEVICES):
        a, b = t.device_nets(device)
        graph.add_edge(a, b, device=t.pool.instance_names[device])
    return graph


def structural_screen(t: Topology) -> ScreenResult:
    """IN and OUT connected through devices; connected=False guarantees no output power."""
    graph = device_graph(t)
    return ScreenResult(connected=nx.has_path(graph, t.net_of[IN], t.net_of[OUT]))
