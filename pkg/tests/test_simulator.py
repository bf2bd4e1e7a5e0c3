"""Tests for MNA stamping, the switched transient simulator and the oracle."""

import math

import numpy as np
import pytest

from app.core import simulator
from app.core.circuit import ComponentPool, topology_from_groups
from app.core.errors import SingularSystem
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
    run_steps,
    stamp_matrix,
)
from app.core.simulator import (
    SimStatus,
    _PeriodMap,
    _phase_steps,
    _run_exact,
    build_mna,
    build_network,
    check_duty,
    oracle,
    oracle_task,
    transient,
)
from app.schemas.config import DUTY_CYCLES, SimConfig


def _rc_network(r=1000.0, c=1e-6, v=1.0) -> Network:
    # node 0 = source, node 1 = capacitor top
    return Network(
        n_nodes=2,
        elements=(VoltageSource(0, v), Resistor(0, 1, r), Capacitor(1, GROUND_NODE, c)),
        g_min=0.0,
    )


# ==================== MNA Tests ====================


class TestMNA:
    def test_rc_charging_matches_backward_euler(self):
        h = 1e-5
        network = _rc_network()
        system = PhaseSystem.build(network, Phase.I, h)
        states = run_steps([system] * 50, np.zeros(network.size))
        a = h / (1000.0 * 1e-6)
        for k in (1, 10, 50):
            expected = 1.0 - (1.0 + a) ** -k
            assert states[k - 1][1] == pytest.approx(expected, rel=1e-9)

    def test_source_branch_current_sign(self):
        network = _rc_network()
        x = PhaseSystem.build(network, Phase.I, 1e-5).step(np.zeros(network.size))
        # current leaves the source into the network, so its branch current is negative
        assert x[network.branch_index(network.sources[0])] < 0

    def test_inductor_current_ramp(self):
        h = 1e-6
        network = Network(
            n_nodes=1,
            elements=(VoltageSource(0, 1.0), Inductor(0, GROUND_NODE, 1e-3)),
            g_min=0.0,
        )
        inductor = network.inductors[0]
        system = PhaseSystem.build(network, Phase.I, h)
        x = np.zeros(network.size)
        for _ in range(10):
            x = system.step(x)
        assert x[network.branch_index(inductor)] == pytest.approx(10 * h / 1e-3, rel=1e-9)

    def test_switch_resistance_by_phase(self):
        switch = Switch(0, GROUND_NODE, Phase.I, r_on=0.05, r_off=1e6)
        assert switch.resistance(Phase.I) == 0.05
        assert switch.resistance(Phase.II) == 1e6

    def test_floating_node_singular_without_gmin(self):
        network = Network(n_nodes=2, elements=(Capacitor(0, 1, 1e-6),), g_min=0.0)
        with pytest.raises(SingularSystem):
            PhaseSystem.build(network, Phase.I, 1e-6)

    def test_gmin_makes_floating_node_solvable(self):
        network = Network(n_nodes=2, elements=(Capacitor(0, 1, 1e-6),), g_min=1e-9)
        PhaseSystem.build(network, Phase.I, 1e-6)

    def test_cached_step_matches_naive(self):
        network = _rc_network()
        system = PhaseSystem.build(network, Phase.I, 1e-5)
        x_cached = x_naive = np.zeros(network.size)
        for _ in range(20):
            x_cached = system.step(x_cached)
            x_naive = naive_step(network, Phase.I, 1e-5, x_naive)
        assert np.array_equal(x_cached, x_naive)

    def test_affine_map(self):
        network = _rc_network()
        system = PhaseSystem.build(network, Phase.I, 1e-5)
        F, g = system.affine_map()
        x = np.array([0.3, 0.7, -0.1])
        np.testing.assert_allclose(F @ x + g, system.step(x), rtol=1e-12, atol=1e-12)

    def test_harness_layout(self, buck, sim_cfg):
        harness = build_network(buck, sim_cfg)
        # nets other than ground: IN, OUT, n1, plus the source node
        assert harness.network.n_nodes == 4
        assert harness.network.size == 4 + 1 + 1
        matrix = build_mna(buck, Phase.I, sim_cfg).matrix
        assert matrix.shape == (6, 6)
        assert np.array_equal(matrix, stamp_matrix(harness.network, Phase.I, sim_cfg.step))


# ==================== Transient Tests ====================


class TestTransient:
    def test_divider_efficiency(self, divider):
        cfg = SimConfig()
        result = transient(divider, 0.5, cfg)
        assert result.status is SimStatus.VALID
        assert result.converged
        assert result.efficiency == pytest.approx(50.0 / 50.1, rel=1e-6)
        assert result.v_out_avg == pytest.approx(100.0 * 50.0 / 50.1, rel=1e-6)

    def test_buck_steps_down(self, buck, sim_cfg):
        result = transient(buck, 0.5, sim_cfg)
        assert result.valid
        assert 45.0 < result.v_out_avg < 50.5
        assert 0.9 < result.efficiency < 1.0

    def test_buck_tracks_duty(self, buck, sim_cfg):
        low = transient(buck, 0.3, sim_cfg).v_out_avg
        high = transient(buck, 0.7, sim_cfg).v_out_avg
        assert low < high

    def test_open_circuit_has_no_output(self, open_circuit, sim_cfg):
        result = transient(open_circuit, 0.5, sim_cfg)
        assert not result.valid
        assert result.reason == "no output power"
        assert math.isnan(result.efficiency)

    def test_passive_energy_balance(self, buck, sim_cfg):
        result = transient(buck, 0.5, sim_cfg)
        assert result.energy_out <= result.energy_in

    def test_output_shorted_to_ground(self, sim_cfg):
        pool = ComponentPool.parse("C,L,Sa,Sb,C")
        t = topology_from_groups(pool, [[0, 2], [1, 3]])
        result = transient(t, 0.5, sim_cfg)
        assert not result.valid

    def test_duty_must_be_on_grid(self, buck, sim_cfg):
        with pytest.raises(ValueError):
            transient(buck, 0.4, sim_cfg)
        assert check_duty(0.3) == 0.3

    @pytest.mark.slow
    def test_exact_stepper_matches_period_map(self, buck, sim_cfg):
        period = transient(buck, 0.5, sim_cfg)
        exact = transient(buck, 0.5, sim_cfg.model_copy(update={"stepper": "exact"}))
        assert exact.v_out_avg == pytest.approx(period.v_out_avg, rel=1e-3)
        assert exact.efficiency == pytest.approx(period.efficiency, rel=1e-3)

    @pytest.mark.slow
    def test_cached_factorization_matches_naive(self, buck, sim_cfg):
        cfg = sim_cfg.model_copy(update={"max_periods": 5, "min_periods": 5})
        harness = build_network(buck, cfg)
        cached = _run_exact(harness, cfg, 0.5, cached=True)
        naive = _run_exact(harness, cfg, 0.5, cached=False)
        assert cached.v_out_avg == naive.v_out_avg
        assert cached.p_in == naive.p_in

    @pytest.mark.slow
    def test_step_halving_changes_little(self, buck, sim_cfg):
        coarse = transient(buck, 0.5, sim_cfg)
        fine = transient(buck, 0.5, sim_cfg.model_copy(update={"steps_per_period": 200}))
        assert fine.v_out_avg == pytest.approx(coarse.v_out_avg, rel=0.02)
        assert fine.efficiency == pytest.approx(coarse.efficiency, abs=0.02)


# ==================== Oracle Tests ====================


class TestOracle:
    def test_valid_buck(self, buck, sim_cfg):
        result = oracle(buck, 0.5, sim_cfg)
        assert result.valid
        assert result.reason == ""
        assert result.efficiency == result.sim.efficiency

    def test_invalid_has_nan_efficiency(self, open_circuit, sim_cfg):
        result = oracle(open_circuit, 0.5, sim_cfg)
        assert not result.valid
        assert math.isnan(result.efficiency)

    def test_output_voltage_threshold(self, divider):
        cfg = SimConfig(min_output_voltage=200.0)
        result = oracle(divider, 0.5, cfg)
        assert not result.valid
        assert result.reason == "output voltage below threshold"

    def test_output_power_threshold(self, divider):
        cfg = SimConfig(min_output_power=1e6)
        assert oracle(divider, 0.5, cfg).reason == "output power below threshold"

    def test_task_wrapper(self, divider):
        assert oracle_task((divider, 0.5), cfg=SimConfig()).valid

    def test_deterministic(self, buck, sim_cfg):
        assert oracle(buck, 0.5, sim_cfg) == oracle(buck, 0.5, sim_cfg)


# ==================== Steady-State Tests ====================


class TestSteadyState:
    @pytest.mark.parametrize("duty", DUTY_CYCLES)
    def test_buck_valid_at_every_duty(self, buck, sim_cfg, duty):
        result = transient(buck, duty, sim_cfg)
        assert result.converged
        assert result.valid
        assert result.p_out <= result.p_in
        assert 0.0 < result.efficiency <= 1.0

    def test_unsettled_run_is_invalid(self, buck):
        # the default 50-ohm load rings for thousands of periods
        result = transient(buck, 0.5, SimConfig(max_periods=60))
        assert not result.converged
        assert result.status is SimStatus.INVALID
        assert result.reason == "no periodic steady state"
        assert math.isnan(result.efficiency)
        assert result.periods_run == 60

    def test_tighter_tolerance_settles_later(self, buck, sim_cfg):
        loose = transient(buck, 0.5, sim_cfg.model_copy(update={"ss_tol": 1e-2}))
        tight = transient(buck, 0.5, sim_cfg)
        assert loose.converged and tight.converged
        assert tight.periods_run > loose.periods_run


class TestPeriodMap:
    def test_rows_match_stepwise(self, buck, sim_cfg):
        harness = build_network(buck, sim_cfg)
        network = harness.network
        pmap = _PeriodMap.build(harness, sim_cfg, 0.3)
        n1, n2 = _phase_steps(sim_cfg, 0.3)
        systems = {phase: PhaseSystem.build(network, phase, sim_cfg.step) for phase in Phase}
        x0 = np.random.default_rng(3).normal(size=network.size)
        expected = run_steps([systems[Phase.I]] * n1 + [systems[Phase.II]] * n2, x0)
        np.testing.assert_allclose(pmap.advance(x0), expected, rtol=1e-8, atol=1e-8)

    def test_every_in_period_state_is_checked(self, buck, sim_cfg, monkeypatch):
        seen = []
        checked = simulator._check_state

        def recording(x):
            seen.append(np.shape(x))
            checked(x)

        monkeypatch.setattr(simulator, "_check_state", recording)
        transient(buck, 0.5, sim_cfg.model_copy(update={"max_periods": 3, "min_periods": 3}))
        size = build_network(buck, sim_cfg).network.size
        assert seen == [(sim_cfg.steps_per_period, size)] * 3
