"""
Two-phase switched-network transient simulator and validity oracle.

Harness around a topology: ideal source V_in behind R_in into net(IN),
R_load parallel C_out from net(OUT) to ground, g_min from every node to
ground. Ground is the net holding port "0". Phase-I switches (Sa) conduct for
the first round(duty * steps_per_period) steps of each period, phase-II
switches (Sb) for the rest.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from app.core.circuit import GROUND, IN, N_DEVICES, OUT, DeviceKind, Topology
from app.core.errors import NumericalError, SingularSystem
from app.core.mna import (
    GROUND_NODE,
    Capacitor,
    Inductor,
    Network,
    Phase,
    PhaseSystem,
    Resistor,
    Switch,
    VoltageSource,
    naive_step,
)
from app.schemas.config import DUTY_CYCLES, SimConfig

logger = logging.getLogger(__name__)

STATE_LIMIT = 1e9
PASSIVITY_TOL = 1e-9
MIN_OUTPUT_POWER = 1e-6


class SimStatus(str, Enum):
    VALID = "valid"
    INVALID = "invalid"


@dataclass(frozen=True)
class SimResult:
    status: SimStatus
    reason: str
    v_out_avg: float
    p_in: float
    p_out: float
    efficiency: float  # NaN when undefined
    periods_run: int
    converged: bool
    energy_in: float = 0.0
    energy_out: float = 0.0

    @property
    def valid(self) -> bool:
        return self.status is SimStatus.VALID


@dataclass(frozen=True)
class OracleResult:
    valid: bool
    efficiency: float  # NaN unless valid
    reason: str
    sim: Optional[SimResult] = None


@dataclass(frozen=True)
class HarnessNetwork:
    """Network for a topology plus the measurement points the simulator reads."""
    network: Network
    out_node: int
    source_row: int
    source: VoltageSource = field(repr=False)


def check_duty(duty: float) -> float:
    if not any(math.isclose(duty, d) for d in DUTY_CYCLES):
        raise ValueError(f"duty {duty} not in {DUTY_CYCLES}")
    return float(duty)


def build_network(t: Topology, cfg: SimConfig) -> HarnessNetwork:
    reps = [rep for rep in t.nets if rep != GROUND]
    node_of = {GROUND: GROUND_NODE}
    node_of.update({rep: i for i, rep in enumerate(reps)})
    src_node = len(reps)

    def node(port: int) -> int:
        return node_of[t.net_of[port]]

    elements = []
    for device, kind in enumerate(t.pool.kinds):
        a, b = (node_of[rep] for rep in t.device_nets(device))
        if kind is DeviceKind.C:
            elements.append(Capacitor(a, b, cfg.c_dev))
        elif kind is DeviceKind.L:
            elements.append(Inductor(a, b, cfg.l_dev))
        elif kind is DeviceKind.SA:
            elements.append(Switch(a, b, Phase.I, cfg.r_on, cfg.r_off))
        else:
            elements.append(Switch(a, b, Phase.II, cfg.r_on, cfg.r_off))
    source = VoltageSource(src_node, cfg.v_in)
    elements.append(source)
    elements.append(Resistor(src_node, node(IN), cfg.r_in))
    elements.append(Resistor(node(OUT), GROUND_NODE, cfg.r_load))
    elements.append(Capacitor(node(OUT), GROUND_NODE, cfg.c_out))

    network = Network(n_nodes=len(reps) + 1, elements=tuple(elements), g_min=cfg.g_min)
    return HarnessNetwork(network, node(OUT), network.branch_index(source), source)


def build_mna(t: Topology, phase: Phase, cfg: SimConfig) -> PhaseSystem:
    return PhaseSystem.build(build_network(t, cfg).network, Phase(phase), cfg.step)


class _PeriodTracker:
    """Per-period averages, steady-state detection and final reporting.

    A run is settled once, for settle_periods consecutive periods, both the
    period-average output voltage and the period-boundary state stop moving,
    and over the report window the stored energy is flat and the output power
    does not exceed the input power.
    """

    def __init__(self, cfg: SimConfig, network: Network):
        self.cfg = cfg
        self.v_out: list[float] = []
        self.p_in: list[float] = []
        self.p_out: list[float] = []
        self.e_in: list[float] = []
        self.energy_in = 0.0
        self.energy_out = 0.0
        self._energy_matrix = network.energy_matrix()
        self._x = np.zeros(network.size)
        self._stored = [0.0]
        self._settled = 0

    def add(self, v_steps: np.ndarray, i_steps: np.ndarray, x: np.ndarray) -> bool:
        """Record one period of per-step output voltage and source current; True once settled."""
        cfg = self.cfg
        v_avg = float(np.mean(v_steps))
        p_in = cfg.v_in * float(np.mean(i_steps))
        p_out = float(np.mean(v_steps * v_steps)) / cfg.r_load
        for value in (v_avg, p_in, p_out):
            if not math.isfinite(value) or abs(value) > STATE_LIMIT:
                raise NumericalError("non-finite or runaway period average")
        e_in = cfg.v_in * float(np.sum(i_steps)) * cfg.step
        self.energy_in += e_in
        self.energy_out += float(np.sum(v_steps * v_steps)) / cfg.r_load * cfg.step

        scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
        state_settled = float(np.max(np.abs(x - self._x), initial=0.0)) <= cfg.ss_tol * scale
        output_settled = bool(self.v_out) and abs(v_avg - self.v_out[-1]) <= cfg.ss_tol * max(1.0, abs(v_avg))
        self._settled = self._settled + 1 if state_settled and output_settled else 0

        self._x = x
        self._stored.append(0.5 * float(x @ self._energy_matrix @ x))
        self.v_out.append(v_avg)
        self.p_in.append(p_in)
        self.p_out.append(p_out)
        self.e_in.append(e_in)
        return (len(self.v_out) >= cfg.min_periods and self._settled >= cfg.settle_periods
                and self._balanced())

    def _balanced(self) -> bool:
        window = min(self.cfg.report_periods, len(self.v_out))
        drift = abs(self._stored[-1] - self._stored[-1 - window])
        e_in = abs(sum(self.e_in[-window:]))
        floor = PASSIVITY_TOL * window / self.cfg.f_sw
        if drift > self.cfg.ss_tol * e_in + floor:
            return False
        return float(np.mean(self.p_out[-window:])) <= float(np.mean(self.p_in[-window:])) + PASSIVITY_TOL

    def result(self, converged: bool) -> SimResult:
        window = self.cfg.report_periods
        v_out = float(np.mean(self.v_out[-window:]))
        p_in = float(np.mean(self.p_in[-window:]))
        p_out = float(np.mean(self.p_out[-window:]))
        common = dict(v_out_avg=v_out, p_in=p_in, p_out=p_out, periods_run=len(self.v_out),
                      converged=converged, energy_in=self.energy_in, energy_out=self.energy_out)
        if not converged:
            return SimResult(SimStatus.INVALID, "no periodic steady state", efficiency=math.nan, **common)
        if p_out < MIN_OUTPUT_POWER:
            return SimResult(SimStatus.INVALID, "no output power", efficiency=math.nan, **common)
        if p_in <= 0.0:
            return SimResult(SimStatus.INVALID, "no input power", efficiency=math.nan, **common)
        efficiency = p_out / p_in
        if efficiency > 1.0:
            return SimResult(SimStatus.INVALID, "efficiency above unity", efficiency=efficiency, **common)
        return SimResult(SimStatus.VALID, "", efficiency=efficiency, **common)


def _check_state(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > STATE_LIMIT:
        raise NumericalError("state is non-finite or exceeds 1e9")


def _phase_steps(cfg: SimConfig, duty: float) -> tuple[int, int]:
    n = cfg.steps_per_period
    n1 = min(max(round(duty * n), 1), n - 1)
    return n1, n - n1


def _readout(states: np.ndarray, harness: HarnessNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Per-step output voltage and delivered source current from stacked states."""
    if harness.out_node == GROUND_NODE:
        v = np.zeros(states.shape[0])
    else:
        v = states[:, harness.out_node]
    return v, -states[:, harness.source_row]


def _run_exact(harness: HarnessNetwork, cfg: SimConfig, duty: float, cached: bool = True) -> SimResult:
    network = harness.network
    h = cfg.step
    n1, _ = _phase_steps(cfg, duty)
    if cached:
        systems = {phase: PhaseSystem.build(network, phase, h) for phase in Phase}

        def step(phase: Phase, x: np.ndarray) -> np.ndarray:
            return systems[phase].step(x)
    else:
        def step(phase: Phase, x: np.ndarray) -> np.ndarray:
            return naive_step(network, phase, h, x)

    tracker = _PeriodTracker(cfg, network)
    x = np.zeros(network.size)
    states = np.empty((cfg.steps_per_period, network.size))
    for _ in range(cfg.max_periods):
        for k in range(cfg.steps_per_period):
            x = step(Phase.I if k < n1 else Phase.II, x)
            _check_state(x)
            states[k] = x
        v, i = _readout(states, harness)
        if tracker.add(v, i, x.copy()):
            return tracker.result(converged=True)
    return tracker.result(converged=False)


@dataclass
class _PeriodMap:
    """Every in-period state as an affine function of the period-start state.

    Row block k of `maps`/`offsets` gives the state after step k + 1, so one
    matrix-vector product yields the whole period.
    """
    maps: np.ndarray
    offsets: np.ndarray
    steps: int

    @classmethod
    def build(cls, harness: HarnessNetwork, cfg: SimConfig, duty: float) -> "_PeriodMap":
        network = harness.network
        size = network.size
        phase_maps = {phase: PhaseSystem.build(network, phase, cfg.step).affine_map() for phase in Phase}
        n1, _ = _phase_steps(cfg, duty)
        steps = cfg.steps_per_period
        maps = np.empty((steps, size, size))
        offsets = np.empty((steps, size))
        T = np.eye(size)
        t = np.zeros(size)
        for k in range(steps):
            F, g = phase_maps[Phase.I if k < n1 else Phase.II]
            T = F @ T
            t = F @ t + g
            maps[k] = T
            offsets[k] = t
        return cls(maps=maps.reshape(steps * size, size), offsets=offsets.reshape(-1), steps=steps)

    def advance(self, x: np.ndarray) -> np.ndarray:
        return (self.maps @ x + self.offsets).reshape(self.steps, x.size)


def _run_period(harness: HarnessNetwork, cfg: SimConfig, duty: float) -> SimResult:
    pmap = _PeriodMap.build(harness, cfg, duty)
    tracker = _PeriodTracker(cfg, harness.network)
    x = np.zeros(harness.network.size)
    for _ in range(cfg.max_periods):
        states = pmap.advance(x)
        _check_state(states)
        x = states[-1].copy()
        v, i = _readout(states, harness)
        if tracker.add(v, i, x):
            return tracker.result(converged=True)
    return tracker.result(converged=False)


def transient(t: Topology, duty: float, cfg: SimConfig) -> SimResult:
    """Fixed-step backward-Euler transient until steady state or max_periods."""
    duty = check_duty(duty)
    harness = build_network(t, cfg)
    try:
        if cfg.stepper == "exact":
            return _run_exact(harness, cfg, duty)
        return _run_period(harness, cfg, duty)
    except SingularSystem:
        raise
    except NumericalError as e:
        return SimResult(SimStatus.INVALID, f"numerical: {e}", v_out_avg=math.nan, p_in=math.nan,
                         p_out=math.nan, efficiency=math.nan, periods_run=0, converged=False)


def oracle(t: Topology, duty: float, cfg: SimConfig) -> OracleResult:
    """Validity label and efficiency; failures fold into valid=False with a reason."""
    try:
        sim = transient(t, duty, cfg)
    except NumericalError as e:
        log_data = {"event": "simulation-failed", "reason": str(e), "topology": t.describe(), "duty": duty}
        logger.warning(json.dumps(log_data))
        return OracleResult(False, math.nan, f"numerical: {e}")
    if not sim.valid:
        return OracleResult(False, math.nan, sim.reason, sim)
    if sim.p_out < cfg.min_output_power:
        return OracleResult(False, math.nan, "output power below threshold", sim)
    if not cfg.min_efficiency <= sim.efficiency <= 1.0:
        return OracleResult(False, math.nan, "efficiency out of range", sim)
    if abs(sim.v_out_avg) < cfg.min_output_voltage:
        return OracleResult(False, math.nan, "output voltage below threshold", sim)
    return OracleResult(True, sim.efficiency, "", sim)


def oracle_task(item: tuple[Topology, float], cfg: SimConfig) -> OracleResult:
    """Picklable worker entry point."""
    t, duty = item
    return oracle(t, duty, cfg)


__all__ = [
    "N_DEVICES", "SimStatus", "SimResult", "OracleResult", "HarnessNetwork",
    "build_network", "build_mna", "transient", "oracle", "oracle_task", "check_duty",
]
