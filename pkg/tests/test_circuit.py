"""Tests for ports, topologies, canonical keys and the structural screen."""

import numpy as np
import pytest

from app.core.circuit import (
    GROUND,
    IN,
    N_PORTS,
    OUT,
    ComponentPool,
    Topology,
    DeviceKind,
    apply_symmetry,
    canonicalize,
    device_port,
    new_topology,
    port_owner,
    random_symmetry,
    structural_screen,
    topology_from_groups,
)
from app.core.dataset import random_topology, sample_pool
from app.core.errors import MalformedTopology


# ==================== Port Layout Tests ====================


class TestPortLayout:
    def test_external_ports(self):
        assert (GROUND, IN, OUT) == (0, 1, 2)

    def test_device_ports(self):
        assert device_port(0, 1) == 3
        assert device_port(0, 2) == 4
        assert device_port(4, 2) == 12

    def test_port_owner_inverse(self):
        for port in range(3, N_PORTS):
            device, pin = port_owner(port)
            assert device_port(device, pin) == port

    def test_port_owner_rejects_external(self):
        with pytest.raises(ValueError):
            port_owner(1)


# ==================== Component Pool Tests ====================


class TestComponentPool:
    def test_parse_and_str(self):
        pool = ComponentPool.parse("C,C,L,Sa,Sb")
        assert pool.kinds[3] is DeviceKind.SA
        assert str(pool) == "C,C,L,Sa,Sb"

    def test_instance_names_count_per_kind(self):
        pool = ComponentPool.parse("C,L,C,Sa,C")
        assert pool.instance_names == ("C0", "L0", "C1", "Sa0", "C2")
        assert pool.device_index("C1") == 2

    def test_wrong_size_rejected(self):
        with pytest.raises(MalformedTopology):
            ComponentPool.parse("C,L,Sa")

    def test_unknown_kind_rejected(self):
        with pytest.raises(MalformedTopology):
            ComponentPool.parse("C,L,Sa,Sb,R")

    def test_port_label(self):
        pool = ComponentPool.parse("C,L,Sa,Sb,C")
        assert pool.port_label(0) == "0"
        assert pool.port_label(device_port(1, 2)) == "L0.2"


# ==================== Topology Tests ====================


class TestTopology:
    def setup_method(self):
        self.pool = ComponentPool.parse("C,L,Sa,Sb,C")

    def test_singletons_by_default(self):
        t = topology_from_groups(self.pool, [])
        assert t.net_of == tuple(range(N_PORTS))
        assert len(t.nets) == N_PORTS

    def test_representative_is_minimum(self):
        t = topology_from_groups(self.pool, [[7, 2, 4]])
        assert t.net_of[7] == 2
        assert t.net_of[4] == 2
        assert t.nets[2] == (2, 4, 7)

    def test_port_in_two_nets_rejected(self):
        with pytest.raises(MalformedTopology):
            topology_from_groups(self.pool, [[1, 3], [3, 4]])

    def test_port_out_of_range_rejected(self):
        with pytest.raises(MalformedTopology):
            topology_from_groups(self.pool, [[1, 13]])

    def test_non_fixed_point_rejected(self):
        net_of = list(range(N_PORTS))
        net_of[5] = 4
        net_of[4] = 3
        with pytest.raises(MalformedTopology):
            Topology(self.pool, tuple(net_of))

    def test_new_topology_requires_all_ports(self):
        with pytest.raises(MalformedTopology):
            new_topology(self.pool, {p: p for p in range(12)})

    def test_new_topology_from_labels(self):
        assignment = {p: p for p in range(N_PORTS)}
        assignment[3] = 1
        t = new_topology(self.pool, assignment)
        assert t.net_of[3] == 1

    def test_new_topology_label_must_be_member(self):
        assignment = {p: p for p in range(N_PORTS)}
        assignment[3] = 4
        assignment[4] = 5
        with pytest.raises(MalformedTopology):
            new_topology(self.pool, assignment)

    def test_describe(self, buck):
        assert "Sa0.1" in buck.describe()
        assert buck.describe().startswith("{0,")


# ==================== Canonical Key Tests ====================


class TestCanonicalize:
    def test_invariant_under_symmetry(self, rng):
        for _ in range(20):
            pool = sample_pool(rng)
            t = random_topology(pool, rng)
            perm, swaps = random_symmetry(pool, rng)
            assert canonicalize(apply_symmetry(t, perm, swaps)) == canonicalize(t)

    def test_port_swap_of_single_device(self, buck):
        swapped = apply_symmetry(buck, list(range(5)), [False, True, False, False, False])
        assert swapped != buck
        assert canonicalize(swapped) == canonicalize(buck)

    def test_pool_order_irrelevant(self):
        a = topology_from_groups(ComponentPool.parse("C,L,Sa,Sb,C"), [[1, 3], [2, 5]])
        # same circuit with the L listed first: L0 now owns ports 3/4, C0 owns 5/6
        b = topology_from_groups(ComponentPool.parse("L,C,Sa,Sb,C"), [[1, 5], [2, 3]])
        assert canonicalize(a) == canonicalize(b)

    def test_distinguishes_external_roles(self):
        pool = ComponentPool.parse("C,L,Sa,Sb,C")
        to_in = topology_from_groups(pool, [[1, 3]])
        to_out = topology_from_groups(pool, [[2, 3]])
        assert canonicalize(to_in) != canonicalize(to_out)

    def test_symmetry_must_preserve_kinds(self, buck):
        with pytest.raises(MalformedTopology):
            apply_symmetry(buck, [1, 0, 2, 3, 4], [False] * 5)

    def test_random_symmetry_preserves_kinds(self, rng):
        pool = ComponentPool.parse("C,C,L,C,Sb")
        perm, _ = random_symmetry(pool, rng)
        assert all(pool.kinds[i] == pool.kinds[j] for i, j in enumerate(perm))
        assert sorted(perm) == list(range(5))


# ==================== Structural Screen Tests ====================


class TestStructuralScreen:
    def test_buck_connected(self, buck):
        assert structural_screen(buck).connected

    def test_open_circuit_disconnected(self, open_circuit):
        assert not structural_screen(open_circuit).connected

    def test_shared_net_connected(self, divider):
        assert structural_screen(divider).connected

    def test_screen_fraction_is_a_probability(self):
        from app.core.dataset import screen_connected_fraction
        fraction = screen_connected_fraction(50, seed=0)
        assert 0.0 <= fraction <= 1.0
        assert np.isclose(fraction, screen_connected_fraction(50, seed=0))
