"""
Modified nodal analysis for linear switched networks.

Unknown vector layout: node voltages (ground excluded) followed by one branch
current per inductor and one per voltage source. Dynamic elements use
backward-Euler companion models at a fixed step h, so the system matrix of a
phase is constant and is factored once.

    capacitor C:  i = (C/h) (v - v_prev)                -> conductance C/h + history current
    inductor  L:  v_a - v_b - (L/h) i = -(L/h) i_prev   -> branch row
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from app.core.errors import SingularSystem

GROUND_NODE = -1


class Phase(str, Enum):
    I = "I"
    II = "II"


@dataclass(frozen=True)
class Resistor:
    a: int
    b: int
    resistance: float


@dataclass(frozen=True)
class Capacitor:
    a: int
    b: int
    capacitance: float


@dataclass(frozen=True)
class Inductor:
    a: int
    b: int
    inductance: float


@dataclass(frozen=True)
class Switch:
    """Resistive switch: r_on while its phase is active, r_off otherwise."""
    a: int
    b: int
    closed_in: Phase
    r_on: float
    r_off: float

    def resistance(self, phase: Phase) -> float:
        return self.r_on if phase == self.closed_in else self.r_off


@dataclass(frozen=True)
class VoltageSource:
    """Ideal DC source from node `a` (positive) to ground."""
    a: int
    voltage: float


Element = Union[Resistor, Capacitor, Inductor, Switch, VoltageSource]


@dataclass(frozen=True)
class Network:
    """Element list over nodes 0..n_nodes-1 (GROUND_NODE is the reference)."""
    n_nodes: int
    elements: tuple[Element, ...]
    g_min: float = 0.0

    @property
    def inductors(self) -> list[Inductor]:
        return [e for e in self.elements if isinstance(e, Inductor)]

    @property
    def sources(self) -> list[VoltageSource]:
        return [e for e in self.elements if isinstance(e, VoltageSource)]

    @property
    def size(self) -> int:
        return self.n_nodes + len(self.inductors) + len(self.sources)

    def branch_index(self, element: Element) -> int:
        """Row/column of the branch current of an inductor or source."""
        branches = self.inductors + self.sources
        for i, other in enumerate(branches):
            if other is element:
                return self.n_nodes + i
        raise KeyError(element)

    def energy_matrix(self) -> np.ndarray:
        """Q with stored energy 0.5 * x @ Q @ x (capacitor voltages, inductor currents)."""
        q = np.zeros((self.size, self.size))
        for element in self.elements:
            if isinstance(element, Capacitor):
                _stamp_conductance(q, element.a, element.b, element.capacitance)
        for i, inductor in enumerate(self.inductors):
            q[self.n_nodes + i, self.n_nodes + i] += inductor.inductance
        return q


def _stamp_conductance(matrix: np.ndarray, a: int, b: int, g: float) -> None:
    if a == b:
        return
    if a != GROUND_NODE:
        matrix[a, a] += g
    if b != GROUND_NODE:
        matrix[b, b] += g
    if a != GROUND_NODE and b != GROUND_NODE:
        matrix[a, b] -= g
        matrix[b, a] -= g


def _voltage(x: np.ndarray, node: int) -> float:
    return 0.0 if node == GROUND_NODE else x[node]


def stamp_matrix(network: Network, phase: Phase, h: float) -> np.ndarray:
    size = network.size
    matrix = np.zeros((size, size))
    for node in range(network.n_nodes):
        matrix[node, node] += network.g_min
    branch = network.n_nodes
    branch_rows: dict[int, int] = {}
    for element in network.inductors + network.sources:
        branch_rows[id(element)] = branch
        branch += 1
    for element in network.elements:
        if isinstance(element, Resistor):
            _stamp_conductance(matrix, element.a, element.b, 1.0 / element.resistance)
        elif isinstance(element, Switch):
            _stamp_conductance(matrix, element.a, element.b, 1.0 / element.resistance(phase))
        elif isinstance(element, Capacitor):
            _stamp_conductance(matrix, element.a, element.b, element.capacitance / h)
        elif isinstance(element, Inductor):
            row = branch_rows[id(element)]
            for node, sign in ((element.a, 1.0), (element.b, -1.0)):
                if node != GROUND_NODE:
                    matrix[node, row] += sign
                    matrix[row, node] += sign
            matrix[row, row] -= element.inductance / h
        elif isinstance(element, VoltageSource):
            row = branch_rows[id(element)]
            if element.a != GROUND_NODE:
                matrix[element.a, row] += 1.0
                matrix[row, element.a] += 1.0
    return matrix


def stamp_rhs(network: Network, h: float, x_prev: np.ndarray) -> np.ndarray:
    """Right-hand side for one step: source voltages plus companion history terms."""
    rhs = np.zeros(network.size)
    branch = network.n_nodes
    for element in network.inductors:
        rhs[branch] = -(element.inductance / h) * x_prev[branch]
        branch += 1
    for element in network.sources:
        rhs[branch] = element.voltage
        branch += 1
    for element in network.elements:
        if isinstance(element, Capacitor) and element.a != element.b:
            g = element.capacitance / h
            i_hist = g * (_voltage(x_prev, element.a) - _voltage(x_prev, element.b))
            if element.a != GROUND_NODE:
                rhs[element.a] += i_hist
            if element.b != GROUND_NODE:
                rhs[element.b] -= i_hist
    return rhs


def _factor(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(matrix)):
        raise SingularSystem("system matrix has non-finite entries")
    lu, piv = lu_factor(matrix, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.size and (not np.all(np.isfinite(diag)) or diag.min() == 0.0):
        raise SingularSystem("system matrix is singular even with g_min")
    return lu, piv


@dataclass
class PhaseSystem:
    """Factored MNA system of one switching phase at a fixed step size."""
    network: Network
    phase: Phase
    h: float
    matrix: np.ndarray
    lu: tuple[np.ndarray, np.ndarray] = field(repr=False)

    @classmethod
    def build(cls, network: Network, phase: Phase, h: float) -> "PhaseSystem":
        matrix = stamp_matrix(network, phase, h)
        return cls(network=network, phase=phase, h=h, matrix=matrix, lu=_factor(matrix))

    def step(self, x_prev: np.ndarray) -> np.ndarray:
        return lu_solve(self.lu, stamp_rhs(self.network, self.h, x_prev), check_finite=False)

    def affine_map(self) -> tuple[np.ndarray, np.ndarray]:
        """(F, g) with step(x) == F @ x + g up to rounding."""
        size = self.network.size
        g = lu_solve(self.lu, stamp_rhs(self.network, self.h, np.zeros(size)), check_finite=False)
        history = np.empty((size, size))
        zero = np.zeros(size)
        base = stamp_rhs(self.network, self.h, zero)
        for j in range(size):
            unit = np.zeros(size)
            unit[j] = 1.0
            history[:, j] = stamp_rhs(self.network, self.h, unit) - base
        return lu_solve(self.lu, history, check_finite=False), g


def naive_step(network: Network, phase: Phase, h: float, x_prev: np.ndarray) -> np.ndarray:
    """Re-stamp and re-factor every step; reference for the cached PhaseSystem."""
    lu = _factor(stamp_matrix(network, phase, h))
    return lu_solve(lu, stamp_rhs(network, h, x_prev), check_finite=False)


def run_steps(systems: Sequence[PhaseSystem], x0: np.ndarray) -> np.ndarray:
    """Apply the systems in order, returning the stacked states after each step."""
    states = np.empty((len(systems), x0.size))
    x = x0
    for i, system in enumerate(systems):
        x = system.step(x)
        states[i] = x
    return states
