"""Tests for unique-sample generation, evaluation metrics and report files."""

import json
import math

import numpy as np
import pytest

from app.core.circuit import ComponentPool
from app.core.encoding import VOCAB, EncodingMode, tokenize
from app.core.errors import FormatError
from app.core.evaluation import (
    UniqueSamples,
    eval_metrics,
    generate_unique,
    read_report,
    write_histogram,
    write_report,
)
from app.core.models import Classifier
from app.schemas.config import EvalConfig
from app.schemas.report import REPORT_COLUMNS, EvalReport, HistogramBin
from tests.conftest import BUCK_NETLIST, BUCK_POOL, OPEN_NETLIST

MODE = EncodingMode.ARRAY

# the buck with C0 and C1 swapped
BUCK_RELABELED = "C1 OUT 0 ; L0 n1 OUT ; Sa0 IN n1 ; Sb0 n1 0 ; C0 0 0"


class ScriptedSampler:
    """Returns a fixed cycle of netlists, one per requested pool."""

    def __init__(self, netlists):
        self.netlists = netlists
        self.calls = 0

    def generate(self, pools, rngs):
        out = []
        for _ in pools:
            out.append(tokenize(self.netlists[self.calls % len(self.netlists)]))
            self.calls += 1
        return out


def buck_pool(rng):
    return ComponentPool.parse(BUCK_POOL)


SCRIPT = [BUCK_NETLIST, BUCK_RELABELED, "C0 OUT", OPEN_NETLIST]


# ==================== Unique Generation Tests ====================


class TestGenerateUnique:
    def test_counts(self):
        out = generate_unique(ScriptedSampler(SCRIPT), 2, 10, MODE, seed=0, pool_sampler=buck_pool)
        assert out.n_unique == 2
        assert out.attempts == 4
        assert out.n_duplicates == 1
        assert out.n_unparseable == 1
        assert out.rho == pytest.approx(2.0)
        assert not out.budget_exhausted
        assert out.netlists == [BUCK_NETLIST, OPEN_NETLIST]

    def test_budget_exhausted(self, caplog):
        with caplog.at_level("WARNING", logger="app.core.evaluation"):
            out = generate_unique(ScriptedSampler(SCRIPT), 3, 6, MODE, seed=0, pool_sampler=buck_pool)
        assert out.budget_exhausted
        assert out.attempts == 6
        assert out.n_unique == 2
        log_data = json.loads(caplog.records[-1].message)
        assert log_data["budget_exhausted"] is True

    def test_small_batches(self):
        sampler = ScriptedSampler(SCRIPT)
        out = generate_unique(sampler, 2, 10, MODE, seed=0, batch=1, pool_sampler=buck_pool)
        assert out.attempts == 4
        assert sampler.calls == 4

    def test_stops_mid_batch(self):
        out = generate_unique(ScriptedSampler([BUCK_NETLIST]), 1, 5, MODE, seed=0, pool_sampler=buck_pool)
        assert out.attempts == 1

    def test_duty_from_grid(self):
        out = generate_unique(ScriptedSampler(SCRIPT), 2, 10, MODE, seed=3, pool_sampler=buck_pool)
        assert all(duty in (0.1, 0.3, 0.5, 0.7, 0.9) for _, duty in out.samples)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_unique(ScriptedSampler(SCRIPT), 0, 10, MODE, seed=0)
        with pytest.raises(ValueError):
            generate_unique(ScriptedSampler(SCRIPT), 5, 4, MODE, seed=0)

    def test_empty_rho(self):
        assert math.isnan(UniqueSamples().rho)


# ==================== Metric Tests ====================


class TestEvalMetrics:
    def test_buck_and_open(self, tiny_model_cfg, sim_cfg):
        samples = generate_unique(ScriptedSampler(SCRIPT), 2, 10, MODE, seed=0, pool_sampler=buck_pool)
        clf = Classifier(tiny_model_cfg, len(VOCAB))
        result = eval_metrics(samples, clf, sim_cfg, MODE, EvalConfig(hist_bins=4), threads=1)
        report = result.report
        # untrained classifier scores 0.5, below the 0.6 threshold
        assert report.e_fvalid == 0.0
        assert report.e_fsvalid == 0.5
        assert 0.5 < report.e_fseff <= 1.0
        assert report.n_unique == 2
        assert report.rho == pytest.approx(2.0)
        assert report.t_stat is None
        np.testing.assert_array_equal(result.oracle_valid, [True, False])
        assert sum(b.n_valid for b in result.histogram) == 1
        assert sum(b.n_invalid for b in result.histogram) == 1
        assert len(result.histogram) == 4

    def test_empty_sample_set(self, tiny_model_cfg, sim_cfg, caplog):
        clf = Classifier(tiny_model_cfg, len(VOCAB))
        with caplog.at_level("INFO", logger="app.core.evaluation"):
            report = eval_metrics(UniqueSamples(), clf, sim_cfg, MODE, threads=1, label="empty").report
        assert report.e_fvalid == 0.0
        assert report.e_fsvalid == 0.0
        assert math.isnan(report.rho)
        events = [json.loads(r.getMessage()) for r in caplog.records if r.name == "app.core.evaluation"]
        skipped = [e for e in events if e["event"] == "t-test-skipped"]
        assert skipped[0]["label"] == "empty"


# ==================== Report File Tests ====================


class TestReportFiles:
    def setup_method(self):
        self.report = EvalReport(label="CS", e_fvalid=0.75, e_fsvalid=0.5, e_fseff=0.91, rho=1.25,
                                 n_unique=4, n_attempts=5, t_stat=2.5, p_value=0.04)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "eval.tsv"
        write_report(path, [self.report, self.report.model_copy(update={"label": "CS w/o NL", "t_stat": None})])
        rows = read_report(path)
        assert list(rows[0]) == list(REPORT_COLUMNS)
        assert rows[0]["model"] == "CS"
        assert float(rows[0]["rho"]) == 1.25
        assert rows[0]["budget_exhausted"] == "0"
        assert rows[1]["t_stat"] == "nan"

    def test_newer_version(self, tmp_path):
        path = tmp_path / "eval.tsv"
        path.write_text("# csyn-report 99\nmodel\n")
        with pytest.raises(FormatError):
            read_report(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "eval.tsv"
        path.write_text("model\trho\n")
        with pytest.raises(FormatError):
            read_report(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "eval.tsv"
        write_report(path, [self.report])
        path.write_text(path.read_text() + "only\tthree\tcells\n")
        with pytest.raises(FormatError) as exc:
            read_report(path)
        assert exc.value.line == 4

    def test_rho_must_match_counts(self):
        with pytest.raises(ValueError):
            EvalReport(**{**self.report.model_dump(), "rho": 3.0})

    def test_histogram_file(self, tmp_path):
        path = tmp_path / "eval.hist.tsv"
        write_histogram(path, [HistogramBin(lo=0.0, hi=0.5, n_valid=1, n_invalid=2),
                               HistogramBin(lo=0.5, hi=1.0, n_valid=3, n_invalid=0)])
        lines = path.read_text().splitlines()
        assert lines[0] == "# csyn-hist 1"
        assert lines[1].split("\t") == ["bin_lo", "bin_hi", "n_sim_valid", "n_sim_invalid"]
        assert lines[3] == "0.500000\t1.000000\t3\t0"
