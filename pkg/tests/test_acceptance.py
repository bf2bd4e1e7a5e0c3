"""
Workbench-scale property checks.

The analytic ones run by default; corpus-scale training runs are marked slow
(`pytest -m slow`).
"""

import math

import numpy as np
import pytest
from scipy.special import softmax

from app.core.circuit import apply_symmetry, canonicalize, random_symmetry, structural_screen
from app.core.dataset import (
    SplitSpec,
    generate_dataset,
    label_topology,
    random_topology,
    sample_duty,
    sample_pool,
    split,
)
from app.core.encoding import EncodingMode, encode_topology, parse_topology
from app.core.evaluation import eval_metrics, generate_unique
from app.core.gumbel import gumbel_st_step
from app.core.mna import GROUND_NODE, Capacitor, Network, Phase, PhaseSystem, Resistor, VoltageSource, run_steps
from app.core.sampling import LMSampler
from app.core.simulator import transient
from app.core.training import evaluate_classifier, pretrain_lm, refine, train_classifier
from app.schemas.config import (
    DUTY_CYCLES,
    DataConfig,
    DecodeConfig,
    EvalConfig,
    ModelConfig,
    SimConfig,
    TrainConfig,
)


class TestSimulatorFidelity:
    def test_rc_step_response(self):
        """Backward Euler at h = RC/100 tracks V(1 - exp(-t/RC)) within 1%."""
        r, c = 1000.0, 1e-6
        tau = r * c
        network = Network(
            n_nodes=2,
            elements=(VoltageSource(0, 1.0), Resistor(0, 1, r), Capacitor(1, GROUND_NODE, c)),
            g_min=0.0,
        )
        states = run_steps([PhaseSystem.build(network, Phase.I, tau / 100)] * 200, np.zeros(network.size))
        for k, t in ((100, tau), (200, 2 * tau)):
            assert states[k - 1][1] == pytest.approx(1.0 - math.exp(-t / tau), rel=0.01)

    def test_divider_efficiency(self, divider):
        result = transient(divider, 0.5, SimConfig())
        assert result.efficiency == pytest.approx(0.998004, abs=1e-3)

    @pytest.mark.slow
    def test_passivity_over_random_circuits(self):
        """Under the default harness every settled run delivers no more than it draws."""
        cfg = SimConfig()
        rng = np.random.default_rng(11)
        settled = 0
        for _ in range(500):
            pool = sample_pool(rng)
            result = transient(random_topology(pool, rng), sample_duty(rng), cfg)
            if result.converged:
                assert result.p_out <= result.p_in + 1e-9
                settled += 1
            else:
                assert not result.valid
            if result.valid:
                assert result.efficiency <= 1.0
        assert settled > 0

    @pytest.mark.parametrize("duty", DUTY_CYCLES)
    def test_buck_under_default_harness(self, buck, duty):
        result = transient(buck, duty, SimConfig())
        assert result.converged
        assert result.valid
        assert result.p_out <= result.p_in
        assert 0.0 < result.efficiency <= 1.0


@pytest.mark.slow
class TestScreenSoundness:
    def test_disconnected_circuits_deliver_no_power(self):
        cfg = SimConfig()
        rng = np.random.default_rng(31)
        checked = 0
        for _ in range(500):
            pool = sample_pool(rng)
            t = random_topology(pool, rng)
            if structural_screen(t).connected:
                continue
            result = transient(t, sample_duty(rng), cfg)
            assert not result.valid
            if math.isfinite(result.p_out):
                assert result.p_out < 1e-6
            checked += 1
        assert checked > 0

    def test_screened_out_circuits_stay_invalid_when_simulated(self):
        cfg = SimConfig()
        rng = np.random.default_rng(32)
        screened_out = []
        while len(screened_out) < 200:
            pool = sample_pool(rng)
            t = random_topology(pool, rng)
            if not structural_screen(t).connected:
                screened_out.append((t, sample_duty(rng)))
        for item in screened_out:
            assert label_topology(item, cfg, screen=True).valid == 0
            assert label_topology(item, cfg, screen=False).valid == 0


class TestGumbelExactness:
    def test_hard_distribution_80_classes(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=80)
        hard, soft = gumbel_st_step(np.tile(logits, (100_000, 1)), 1.0, rng)
        np.testing.assert_array_equal(hard.argmax(axis=-1), soft.argmax(axis=-1))
        tv = 0.5 * np.abs(hard.mean(axis=0) - softmax(logits)).sum()
        assert tv < 0.02


@pytest.mark.slow
class TestEncodingAtScale:
    @pytest.mark.parametrize("mode", list(EncodingMode))
    def test_round_trip(self, mode):
        rng = np.random.default_rng(21)
        for _ in range(10_000):
            pool = sample_pool(rng)
            t = random_topology(pool, rng)
            assert parse_topology(encode_topology(t, mode), pool, mode) == t

    def test_canonical_key_invariance(self):
        rng = np.random.default_rng(22)
        for _ in range(1_000):
            pool = sample_pool(rng)
            t = random_topology(pool, rng)
            permutation, swaps = random_symmetry(pool, rng)
            assert canonicalize(apply_symmetry(t, permutation, swaps)) == canonicalize(t)


# ==================== Corpus-scale Training ====================


@pytest.fixture(scope="module")
def corpus():
    data = DataConfig(n=20_000, seed=0, encoding="array")
    return list(generate_dataset(data.n, SimConfig(), data)), data


@pytest.mark.slow
class TestCorpusScale:
    def test_classifier_f1(self, corpus):
        records, data = corpus
        train, val, test = split(records, SplitSpec.from_config(data))
        clf, _ = train_classifier(train, val, ModelConfig(), TrainConfig(), EncodingMode.ARRAY)
        assert evaluate_classifier(clf, test, EncodingMode.ARRAY).f1 >= 0.85

    def test_refinement_direction(self, corpus):
        """Refinement does not lower simulator validity or raise rho in at least 4 of 5 seeds."""
        records, data = corpus
        train, val, _ = split(records, SplitSpec.from_config(data))
        mode = EncodingMode.ARRAY
        model_cfg = ModelConfig()
        sim = SimConfig()
        eval_cfg = EvalConfig(n_unique=200)
        validity_wins = rho_wins = 0
        for seed in range(5):
            cfg = TrainConfig(seed=seed)
            decode = DecodeConfig(seed=seed)
            clf, _ = train_classifier(train, val, model_cfg, cfg, mode)
            base = pretrain_lm(train, val, model_cfg, cfg, mode).model

            def score(lm):
                samples = generate_unique(LMSampler(lm, decode), eval_cfg.n_unique, eval_cfg.max_attempts,
                                          mode, seed, eval_cfg.batch)
                return eval_metrics(samples, clf, sim, mode, eval_cfg).report

            before = score(base)
            after = score(refine(base, clf, train, model_cfg, cfg, decode, mode).model)
            validity_wins += after.e_fsvalid >= before.e_fsvalid
            rho_wins += after.rho <= before.rho
        assert validity_wins >= 4
        assert rho_wins >= 4

    def test_refined_samples_validity_correlation(self, corpus):
        """Classifier scores separate simulator-valid from invalid refined samples (Welch p < 0.05)."""
        records, data = corpus
        train, val, _ = split(records, SplitSpec.from_config(data))
        mode = EncodingMode.ARRAY
        model_cfg = ModelConfig()
        cfg = TrainConfig(seed=0)
        decode = DecodeConfig(seed=0)
        eval_cfg = EvalConfig(n_unique=200)
        clf, _ = train_classifier(train, val, model_cfg, cfg, mode)
        base = pretrain_lm(train, val, model_cfg, cfg, mode).model
        refined = refine(base, clf, train, model_cfg, cfg, decode, mode).model
        samples = generate_unique(LMSampler(refined, decode), eval_cfg.n_unique, eval_cfg.max_attempts,
                                  mode, 0, eval_cfg.batch)
        report = eval_metrics(samples, clf, SimConfig(), mode, eval_cfg).report
        assert report.p_value is not None
        assert report.p_value < 0.05
