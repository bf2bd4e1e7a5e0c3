"""Tests for random-search dataset generation, .csd files and splits."""

import json
import logging
import math

import numpy as np
import pytest

from app.core.circuit import ComponentPool, canonicalize
from app.core.dataset import (
    DatasetRecord,
    SplitSpec,
    format_record,
    generate_dataset,
    label_topology,
    parse_record,
    random_topology,
    read_records,
    sample_duty,
    sample_pool,
    split,
    write_records,
)
from app.core.encoding import EncodingMode
from app.core.errors import FormatError
from app.schemas.config import DUTY_CYCLES, DataConfig, SimConfig
from tests.conftest import BUCK_NETLIST, BUCK_POOL, make_record

FAST_SIM = SimConfig(max_periods=300, min_periods=20)


def _generate(n=8, **data_kwargs):
    data = DataConfig(n=n, seed=11, **data_kwargs)
    return list(generate_dataset(n, FAST_SIM, data, threads=1))


# ==================== Sampling Tests ====================


class TestSampling:
    def test_pool_has_five_devices(self, rng):
        for _ in range(20):
            assert len(sample_pool(rng).kinds) == 5

    def test_duty_on_grid(self, rng):
        assert all(sample_duty(rng) in DUTY_CYCLES for _ in range(20))

    def test_random_topology_is_well_formed(self, rng):
        pool = sample_pool(rng)
        t = random_topology(pool, rng)
        assert sum(len(m) for m in t.nets.values()) == 13

    def test_alpha_controls_net_count(self):
        def mean_nets(alpha):
            rng = np.random.default_rng(0)
            pool = ComponentPool.parse(BUCK_POOL)
            return np.mean([len(random_topology(pool, rng, alpha).nets) for _ in range(200)])

        assert mean_nets(0.5) < mean_nets(5.0)


# ==================== Labeling Tests ====================


class TestLabel:
    def test_screen_fast_path(self, open_circuit):
        label = label_topology((open_circuit, 0.5), FAST_SIM, screen=True)
        assert label.valid == 0
        assert not label.connected
        assert label.reason.startswith("screen")
        assert math.isnan(label.efficiency)

    def test_screen_disabled_runs_oracle(self, open_circuit):
        label = label_topology((open_circuit, 0.5), FAST_SIM, screen=False)
        assert label.valid == 0
        assert label.reason == "no output power"

    def test_buck_labeled_valid(self, buck):
        label = label_topology((buck, 0.5), SimConfig(r_load=5.0))
        assert label.valid == 1
        assert 0.0 < label.efficiency <= 1.0


# ==================== Generation Tests ====================


class TestGenerateDataset:
    def test_record_fields(self):
        records = _generate()
        assert [r.id for r in records] == list(range(8))
        for r in records:
            assert r.duty in DUTY_CYCLES
            r.topology()
            if r.valid:
                assert 0.0 < r.efficiency <= 1.0
            else:
                assert math.isnan(r.efficiency)

    def test_reproducible(self):
        assert _generate() == _generate()

    def test_thread_count_does_not_change_output(self):
        data = DataConfig(n=6, seed=11)
        one = list(generate_dataset(6, FAST_SIM, data, threads=1))
        two = list(generate_dataset(6, FAST_SIM, data, threads=2))
        assert one == two

    def test_dedup_removes_isomorphic_repeats(self):
        records = _generate(n=12, dedup=True)
        keys = [(canonicalize(r.topology()), r.duty) for r in records]
        assert len(set(keys)) == len(keys)

    def test_custom_pool_sampler(self):
        fixed = ComponentPool.parse(BUCK_POOL)
        records = list(generate_dataset(4, FAST_SIM, DataConfig(n=4), pool_sampler=lambda rng: fixed, threads=1))
        assert all(r.pool == fixed for r in records)

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            list(generate_dataset(0, FAST_SIM, DataConfig()))

    def test_logs_summary(self, caplog):
        with caplog.at_level(logging.INFO, logger="app.core.dataset"):
            _generate(n=4)
        summaries = [json.loads(r.message) for r in caplog.records if r.message.startswith("{")]
        assert summaries[-1]["event"] == "dataset"
        assert summaries[-1]["records"] == 4


# ==================== Persistence Tests ====================


class TestPersistence:
    def test_write_then_read(self, tmp_path, tiny_corpus):
        path = tmp_path / "data.csd"
        assert write_records(path, tiny_corpus) == len(tiny_corpus)
        assert read_records(path) == tiny_corpus

    def test_header_and_nan(self, tmp_path):
        record = make_record(0, BUCK_POOL, BUCK_NETLIST, 0)
        path = tmp_path / "one.csd"
        write_records(path, [record])
        lines = path.read_text().splitlines()
        assert lines[0] == "# csd-version 1"
        assert lines[1].split("\t")[5] == "nan"

    def test_float_precision_preserved(self, tmp_path):
        record = make_record(3, BUCK_POOL, BUCK_NETLIST, 1, efficiency=0.1 + 0.2, v_out=1 / 3)
        path = tmp_path / "p.csd"
        write_records(path, [record])
        assert read_records(path)[0].efficiency == 0.1 + 0.2

    def test_wrong_field_count(self):
        with pytest.raises(FormatError) as exc_info:
            parse_record("0\tC,L,Sa,Sb,C\t0.5", 7)
        assert exc_info.value.line == 7

    def test_bad_pool(self):
        line = format_record(make_record(0, BUCK_POOL, BUCK_NETLIST, 0)).replace(BUCK_POOL, "C,L,R,Sb,C")
        with pytest.raises(FormatError):
            parse_record(line, 2)

    def test_valid_needs_efficiency(self):
        line = format_record(make_record(0, BUCK_POOL, BUCK_NETLIST, 0)).split("\t")
        line[4] = "1"
        with pytest.raises(FormatError):
            parse_record("\t".join(line), 2)

    def test_unparseable_netlist(self):
        line = format_record(make_record(0, BUCK_POOL, "C0 OUT", 0))
        with pytest.raises(FormatError):
            parse_record(line, 2)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.csd"
        path.write_text(format_record(make_record(0, BUCK_POOL, BUCK_NETLIST, 0)) + "\n")
        with pytest.raises(FormatError):
            read_records(path)

    def test_newer_version_rejected(self, tmp_path):
        path = tmp_path / "future.csd"
        path.write_text("# csd-version 2\n")
        with pytest.raises(FormatError):
            read_records(path)

    def test_netlist_in_other_mode(self):
        record = make_record(0, BUCK_POOL, BUCK_NETLIST, 1, efficiency=0.9)
        assert record.netlist(EncodingMode.ARRAY) == BUCK_NETLIST
        assert record.netlist(EncodingMode.NL_INCIDENT).startswith("Net IN connects")


# ==================== Split Tests ====================


class TestSplit:
    def setup_method(self):
        self.records = [make_record(i, BUCK_POOL, BUCK_NETLIST, 0) for i in range(200)]

    def test_partition(self):
        train, val, test = split(self.records, SplitSpec())
        ids = sorted(r.id for r in train + val + test)
        assert ids == list(range(200))
        assert len(train) > len(val)

    def test_order_independent(self):
        a = split(self.records, SplitSpec(seed=5))
        b = split(list(reversed(self.records)), SplitSpec(seed=5))
        assert sorted(r.id for r in a[0]) == sorted(r.id for r in b[0])

    def test_seed_changes_assignment(self):
        a = split(self.records, SplitSpec(seed=1))[0]
        b = split(self.records, SplitSpec(seed=2))[0]
        assert {r.id for r in a} != {r.id for r in b}

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2)

    def test_record_hashable(self):
        assert len({self.records[0], self.records[0]}) == 1
        assert isinstance(self.records[0], DatasetRecord)
