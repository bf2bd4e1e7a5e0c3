"""
Evaluation of a generator: unique-sample generation, classifier/simulator
validity rates, efficiency, duplicate generation rate, the validity
correlation t-test and the encoding ablation.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from app.core.circuit import CanonicalKey, Topology, canonicalize
from app.core.dataset import DatasetRecord, PoolSampler, SplitSpec, sample_duty, sample_pool, split
from app.core.encoding import EncodingMode, classifier_ids, detokenize, encode_topology, parse_topology
from app.core.errors import DegenerateGroups, FormatError, ParseError
from app.core.metrics import MetricsLog
from app.core.models import Classifier
from app.core.sampling import LMSampler, TopologySampler
from app.core.simulator import OracleResult, oracle_task
from app.core.stats import welch_t_test
from app.core.training import predict_proba, pretrain_lm, refine, train_classifier
from app.core.workers import parallel_map
from app.schemas.config import DecodeConfig, EvalConfig, ModelConfig, SimConfig, TrainConfig
from app.schemas.report import REPORT_COLUMNS, REPORT_VERSION, EvalReport, HistogramBin

logger = logging.getLogger(__name__)

REPORT_HEADER = "# csyn-report "
HIST_HEADER = "# csyn-hist "


@dataclass
class UniqueSamples:
    samples: list[tuple[Topology, float]] = field(default_factory=list)
    netlists: list[str] = field(default_factory=list)
    attempts: int = 0
    n_unparseable: int = 0
    n_duplicates: int = 0
    budget_exhausted: bool = False

    @property
    def n_unique(self) -> int:
        return len(self.samples)

    @property
    def rho(self) -> float:
        return self.attempts / self.n_unique if self.samples else math.nan


def generate_unique(
    sampler: TopologySampler,
    n_unique: int,
    max_attempts: int,
    mode: EncodingMode,
    seed: int,
    batch: int = 32,
    pool_sampler: Optional[PoolSampler] = None,
) -> UniqueSamples:
    """Decode fresh prompts until n_unique distinct topologies or max_attempts decodes."""
    if n_unique < 1 or max_attempts < n_unique:
        raise ValueError("need n_unique >= 1 and max_attempts >= n_unique")
    draw_pool = pool_sampler or sample_pool
    rng = np.random.default_rng(seed)
    out = UniqueSamples()
    seen: set[CanonicalKey] = set()
    while out.n_unique < n_unique and out.attempts < max_attempts:
        k = min(batch, max_attempts - out.attempts)
        pools = [draw_pool(rng) for _ in range(k)]
        rngs = [np.random.default_rng([seed, out.attempts + j]) for j in range(k)]
        for pool, ids in zip(pools, sampler.generate(pools, rngs)):
            out.attempts += 1
            text = detokenize(ids)
            try:
                topology = parse_topology(text, pool, mode)
            except ParseError:
                out.n_unparseable += 1
                continue
            key = canonicalize(topology)
            if key in seen:
                out.n_duplicates += 1
                continue
            seen.add(key)
            out.samples.append((topology, sample_duty(np.random.default_rng([seed, out.attempts, 1]))))
            out.netlists.append(text)
            if out.n_unique == n_unique:
                break

    out.budget_exhausted = out.n_unique < n_unique
    log_data = {
        "event": "generate-unique",
        "n_unique": out.n_unique,
        "attempts": out.attempts,
        "unparseable": out.n_unparseable,
        "duplicates": out.n_duplicates,
        "budget_exhausted": out.budget_exhausted,
    }
    if out.budget_exhausted:
        logger.warning(json.dumps(log_data))
    else:
        logger.info(json.dumps(log_data))
    return out


@dataclass
class EvalResult:
    report: EvalReport
    p_valid: np.ndarray
    oracle_valid: np.ndarray
    histogram: list[HistogramBin]


def _histogram(probs: np.ndarray, labels: np.ndarray, bins: int) -> list[HistogramBin]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    valid, _ = np.histogram(probs[labels], bins=edges)
    invalid, _ = np.histogram(probs[~labels], bins=edges)
    return [
        HistogramBin(lo=float(edges[i]), hi=float(edges[i + 1]), n_valid=int(valid[i]), n_invalid=int(invalid[i]))
        for i in range(bins)
    ]


def eval_metrics(
    samples: UniqueSamples,
    clf: Classifier,
    sim: SimConfig,
    mode: EncodingMode,
    cfg: EvalConfig = EvalConfig(),
    threads: int = 0,
    label: str = "model",
) -> EvalResult:
    """Classifier and simulator scores for a unique-sample set."""
    seqs = [classifier_ids(encode_topology(t, mode)) for t, _ in samples.samples]
    probs = predict_proba(clf, seqs, cfg.batch)
    results: list[OracleResult] = parallel_map(oracle_task, samples.samples, threads=threads,
                                               desc="simulating", cfg=sim)
    valid = np.array([r.valid for r in results], dtype=bool)
    efficiencies = np.array([r.efficiency for r in results if r.valid])

    n = len(samples.samples)
    t_stat = p_value = None
    try:
        welch = welch_t_test(probs[valid], probs[~valid])
        t_stat, p_value = welch.t, welch.p_value
    except DegenerateGroups as e:
        log_data = {"event": "t-test-skipped", "label": label, "reason": str(e)}
        logger.info(json.dumps(log_data))

    report = EvalReport(
        label=label,
        e_fvalid=float(np.mean(probs > cfg.threshold)) if n else 0.0,
        e_fsvalid=float(np.mean(valid)) if n else 0.0,
        e_fseff=float(np.mean(efficiencies)) if efficiencies.size else 0.0,
        rho=samples.rho,
        n_unique=samples.n_unique,
        n_attempts=samples.attempts,
        n_unparseable=samples.n_unparseable,
        n_duplicates=samples.n_duplicates,
        budget_exhausted=samples.budget_exhausted,
        t_stat=t_stat,
        p_value=p_value,
    )
    log_data = {"event": "eval", **report.model_dump()}
    logger.info(json.dumps(log_data))
    return EvalResult(report, probs, valid, _histogram(probs, valid, cfg.hist_bins))


# ==================== Report files ====================


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".6f")
    return str(value)


def write_report(path: Path, reports: Sequence[EvalReport]) -> None:
    lines = [f"{REPORT_HEADER}{REPORT_VERSION}", "\t".join(REPORT_COLUMNS)]
    for report in reports:
        lines.append("\t".join(_cell(getattr(report, name)) for name in REPORT_COLUMNS.values()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: Path) -> list[dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(REPORT_HEADER):
        raise FormatError("missing csyn-report header", 1)
    version = int(lines[0][len(REPORT_HEADER):])
    if version > REPORT_VERSION:
        raise FormatError(f"report version {version} is newer than supported version {REPORT_VERSION}", 1)
    header = lines[1].split("\t")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise FormatError(f"expected {len(header)} columns, got {len(cells)}", lineno)
        rows.append(dict(zip(header, cells)))
    return rows


def write_histogram(path: Path, bins: Sequence[HistogramBin]) -> None:
    lines = [f"{HIST_HEADER}{REPORT_VERSION}", "bin_lo\tbin_hi\tn_sim_valid\tn_sim_invalid"]
    lines += [f"{b.lo:.6f}\t{b.hi:.6f}\t{b.n_valid}\t{b.n_invalid}" for b in bins]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ==================== Ablation ====================


@dataclass
class AblationSettings:
    model: ModelConfig
    train: TrainConfig
    decode: DecodeConfig
    eval: EvalConfig
    sim: SimConfig
    split: SplitSpec
    threads: int = 0
    metrics_log: Optional[Path] = None


def ablation_run(records: Sequence[DatasetRecord], settings: AblationSettings) -> list[EvalReport]:
    """Classifier, pretraining, refinement and evaluation under each encoding on one corpus."""
    train, val, _ = split(records, settings.split)
    reports = []
    for mode in (EncodingMode.NL_INCIDENT, EncodingMode.ARRAY):
        metrics = MetricsLog(settings.metrics_log, f"ablate-{mode.value}")
        clf, _ = train_classifier(train, val, settings.model, settings.train, mode, metrics)
        lm = pretrain_lm(train, val, settings.model, settings.train, mode, metrics).model
        lm = refine(lm, clf, train, settings.model, settings.train, settings.decode, mode, metrics,
                    settings.eval.threshold).model
        samples = generate_unique(LMSampler(lm, settings.decode), settings.eval.n_unique,
                                  settings.eval.max_attempts, mode, settings.eval.seed, settings.eval.batch)
        label = "CS" if mode is EncodingMode.NL_INCIDENT else "CS w/o NL"
        reports.append(eval_metrics(samples, clf, settings.sim, mode, settings.eval,
                                    settings.threads, label).report)
    return reports
