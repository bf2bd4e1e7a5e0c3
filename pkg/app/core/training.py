"""
Training procedures: validity classifier, generator NLL pretraining and
Gumbel straight-through refinement against the frozen classifier.

Refinement objective per step:

    exp(-s1) * L_LLM + s1 + exp(-s2) * L_valid + s2

L_LLM is teacher-forced NLL on a ground-truth batch. L_valid = mean(1 - p_valid)
over Gumbel-max rollouts whose straight-through rows feed the classifier.
With loss_weighting = "nll_only" the step sequence (batches, dropout masks,
clipping, optimizer state) is the same as pretraining.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.core import autodiff as ad
from app.core.autodiff import Tensor
from app.core.dataset import DatasetRecord, sample_pool
from app.core.encoding import VOCAB, EncodingMode, classifier_ids, lm_example, prompt_ids
from app.core.errors import DegenerateLabels, EmptyTarget, NonFiniteError, SequenceTooLong
from app.core.gumbel import relaxed_rows
from app.core.metrics import MetricsLog, StepMetrics
from app.core.models import Classifier, Generator, lm_nll, pad_batch
from app.core.optim import AdamW, clip_grad_norm
from app.core.sampling import LMSampler, gumbel_rollout
from app.core.stats import BinaryScores, binary_scores
from app.schemas.config import DecodeConfig, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

LMExample = tuple[list[int], int]

_CLF_DECISION = 0.5


@dataclass
class ClassifierReport:
    scores: BinaryScores
    best_epoch: int
    first_loss: float


@dataclass
class TrainResult:
    model: Generator
    history: list[StepMetrics]
    best_epoch: int
    best_score: float
    loss_weights: dict[str, float] = field(default_factory=dict)


def _dropout_rng(cfg: TrainConfig, step: int, rate: float) -> Optional[np.random.Generator]:
    return np.random.default_rng([cfg.seed, step, 2]) if rate > 0 else None


def _check(loss: Tensor, run: str, step: int) -> None:
    if not loss.is_finite():
        log_data = {"event": "halted", "run": run, "step": step, "reason": "non-finite loss"}
        logger.error(json.dumps(log_data))
        raise NonFiniteError(f"{run}: loss became non-finite at step {step}")


def _batches(n: int, cfg: TrainConfig, epochs: int, rng: np.random.Generator):
    """(epoch, index array) per step; shuffles once per epoch."""
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            yield epoch, order[start:start + cfg.batch_size]


# ==================== Classifier ====================


def predict_proba(clf: Classifier, seqs: Sequence[Sequence[int]], batch: int = 64) -> np.ndarray:
    out = []
    with ad.no_grad():
        for start in range(0, len(seqs), batch):
            ids = pad_batch(seqs[start:start + batch], VOCAB.pad_id)
            out.append(clf.forward_ids(ids).data)
    return np.concatenate(out) if out else np.zeros(0)


def _clf_inputs(records: Sequence[DatasetRecord], mode: EncodingMode) -> tuple[list[list[int]], np.ndarray]:
    seqs = [classifier_ids(r.netlist(mode)) for r in records]
    labels = np.array([r.valid for r in records], dtype=np.float64)
    return seqs, labels


def evaluate_classifier(clf: Classifier, records: Sequence[DatasetRecord], mode: EncodingMode) -> BinaryScores:
    seqs, labels = _clf_inputs(records, mode)
    probs = predict_proba(clf, seqs)
    return binary_scores(probs > _CLF_DECISION, labels > 0.5)


def train_classifier(
    train: Sequence[DatasetRecord],
    val: Sequence[DatasetRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    mode: EncodingMode,
    metrics: Optional[MetricsLog] = None,
) -> tuple[Classifier, ClassifierReport]:
    """BCE training; keeps the epoch with the best validation F1."""
    seqs, labels = _clf_inputs(train, mode)
    if len(set(labels.tolist())) < 2:
        raise DegenerateLabels("training data needs both valid and invalid records")
    metrics = metrics or MetricsLog(None, "train-clf")
    clf = Classifier(model_cfg, len(VOCAB), seed=cfg.seed, pad_id=VOCAB.pad_id)
    opt = AdamW.from_config(clf.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    held_out = val if val else train

    best_state = clf.state()
    best_scores = evaluate_classifier(clf, held_out, mode)
    best_epoch = -1
    first_loss = math.nan
    step = 0
    current_epoch = 0
    for epoch, idx in _batches(len(seqs), cfg, cfg.clf_epochs, rng):
        if epoch != current_epoch:
            best_state, best_scores, best_epoch = _keep_best_clf(
                clf, held_out, mode, current_epoch, best_state, best_scores, best_epoch)
            current_epoch = epoch
        ids = pad_batch([seqs[i] for i in idx], VOCAB.pad_id)
        p = clf.forward_ids(ids, _dropout_rng(cfg, step, model_cfg.dropout))
        loss = ad.binary_cross_entropy(p, labels[idx])
        _check(loss, "train-clf", step)
        if step == 0:
            first_loss = loss.item()
        opt.zero_grad()
        loss.backward()
        clip_grad_norm(clf.parameters(), cfg.grad_clip)
        opt.step()
        metrics.record(StepMetrics(step, L_valid=loss.item(), mean_p_valid=float(p.data.mean())))
        step += 1
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if step:
        best_state, best_scores, best_epoch = _keep_best_clf(
            clf, held_out, mode, current_epoch, best_state, best_scores, best_epoch)

    clf.load_state(best_state)
    log_data = {"event": "train-clf", "steps": step, "best_epoch": best_epoch,
                "f1": best_scores.f1, "precision": best_scores.precision, "recall": best_scores.recall}
    logger.info(json.dumps(log_data))
    return clf, ClassifierReport(best_scores, best_epoch, first_loss)


def _keep_best_clf(clf, records, mode, epoch, best_state, best_scores, best_epoch):
    scores = evaluate_classifier(clf, records, mode)
    if best_epoch < 0 or scores.f1 > best_scores.f1:
        return clf.state(), scores, epoch
    return best_state, best_scores, best_epoch


# ==================== Generator pretraining ====================


def lm_examples(records: Sequence[DatasetRecord], mode: EncodingMode, max_len: int) -> list[LMExample]:
    """Training sequences from valid records; over-long ones are skipped."""
    examples = []
    skipped = 0
    for record in records:
        if not record.valid:
            continue
        try:
            examples.append(lm_example(record.pool, record.netlist(mode), VOCAB, max_len))
        except SequenceTooLong:
            skipped += 1
    if skipped:
        log_data = {"event": "records-skipped", "skipped": skipped, "max_len": max_len,
                    "reason": f"longer than {max_len} tokens"}
        logger.warning(json.dumps(log_data))
    return examples


def eval_nll(model: Generator, examples: Sequence[LMExample], batch: int = 32) -> float:
    if not examples:
        return math.nan
    total = 0.0
    count = 0
    with ad.no_grad():
        for start in range(0, len(examples), batch):
            chunk = examples[start:start + batch]
            n_targets = sum(len(ids) - 1 - sep for ids, sep in chunk)
            total += lm_nll(model, chunk).item() * n_targets
            count += n_targets
    return total / count


def pretrain_lm(
    train: Sequence[DatasetRecord],
    val: Sequence[DatasetRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    mode: EncodingMode,
    metrics: Optional[MetricsLog] = None,
    model: Optional[Generator] = None,
) -> TrainResult:
    """Teacher-forced NLL on valid records; keeps the epoch with the lowest validation NLL."""
    examples = lm_examples(train, mode, model_cfg.max_len)
    if not examples:
        raise EmptyTarget("no valid training records")
    val_examples = lm_examples(val, mode, model_cfg.max_len) or examples
    metrics = metrics or MetricsLog(None, "train-lm")
    model = model or Generator(model_cfg, len(VOCAB), seed=cfg.seed)
    opt = AdamW.from_config(model.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)

    best_state = model.state()
    best_nll = eval_nll(model, val_examples)
    best_epoch = -1
    step = 0
    current_epoch = 0
    for epoch, idx in _batches(len(examples), cfg, cfg.lm_epochs, rng):
        if epoch != current_epoch:
            best_state, best_nll, best_epoch = _keep_best_lm(
                model, val_examples, current_epoch, best_state, best_nll, best_epoch)
            current_epoch = epoch
        nll = _nll_step(model, opt, [examples[i] for i in idx], cfg, step, "train-lm")
        metrics.record(StepMetrics(step, L_LLM=nll))
        step += 1
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if step:
        best_state, best_nll, best_epoch = _keep_best_lm(
            model, val_examples, current_epoch, best_state, best_nll, best_epoch)

    model.load_state(best_state)
    log_data = {"event": "train-lm", "steps": step, "best_epoch": best_epoch, "val_nll": best_nll}
    logger.info(json.dumps(log_data))
    return TrainResult(model, metrics.history, best_epoch, best_nll)


def _nll_step(model: Generator, opt: AdamW, batch: list[LMExample], cfg: TrainConfig,
              step: int, run: str) -> float:
    loss = lm_nll(model, batch, _dropout_rng(cfg, step, model.cfg.dropout), VOCAB.pad_id)
    _check(loss, run, step)
    opt.zero_grad()
    loss.backward()
    clip_grad_norm(model.parameters(), cfg.grad_clip)
    opt.step()
    return loss.item()


def _keep_best_lm(model, examples, epoch, best_state, best_nll, best_epoch):
    nll = eval_nll(model, examples)
    if best_epoch < 0 or nll < best_nll:
        return model.state(), nll, epoch
    return best_state, best_nll, best_epoch


# ==================== Refinement ====================


def validity_from_logits(clf: Classifier, logits: Tensor, noise: np.ndarray, hard_ids: np.ndarray,
                         valid: np.ndarray, tau: float) -> tuple[Tensor, Tensor]:
    """(L_valid, p_valid) for (B, L, V) generator logits at the generated positions."""
    rows, _ = relaxed_rows(logits, noise, tau, hard_ids)
    p = clf.forward_dist(rows, valid)
    return ad.mean(1.0 - p), p


def validity_loss(lm: Generator, clf: Classifier, prompts: Sequence[Sequence[int]],
                  rng: np.random.Generator, tau: float, max_new: int) -> tuple[Tensor, float]:
    """Gumbel-max rollout without a graph, then one graph forward to relax its tokens."""
    roll = gumbel_rollout(lm, prompts, max_new, rng)
    b = len(prompts)
    length = max(1, max(len(t) for t in roll.tokens))
    positions = np.zeros((b, length), dtype=np.int64)
    noise = np.zeros((b, length, lm.vocab_size))
    hard = np.full((b, length), VOCAB.pad_id, dtype=np.int64)
    valid = np.zeros((b, length), dtype=bool)
    for i, (prompt, tokens) in enumerate(zip(prompts, roll.tokens)):
        n = len(tokens)
        positions[i, :n] = np.arange(len(prompt) - 1, len(prompt) - 1 + n)
        noise[i, :n] = roll.noise[i]
        hard[i, :n] = tokens
        valid[i, :n] = True

    seqs = [list(p) + t for p, t in zip(prompts, roll.tokens)]
    logits = lm.forward(pad_batch(seqs, VOCAB.pad_id))
    selected = logits[np.arange(b)[:, None], positions]
    loss, p = validity_from_logits(clf, selected, noise, hard, valid, tau)
    return loss, float(p.data.mean())


def classifier_valid_fraction(lm: Generator, clf: Classifier, decode: DecodeConfig, n: int,
                              seed: int, threshold: float) -> float:
    """Share of n sampled generations the classifier scores above threshold."""
    rng = np.random.default_rng(seed)
    pools = [sample_pool(rng) for _ in range(n)]
    rngs = [np.random.default_rng([seed, i]) for i in range(n)]
    generated = LMSampler(lm, decode).generate(pools, rngs)
    probs = predict_proba(clf, [g or [VOCAB.eos_id] for g in generated])
    return float(np.mean(probs > threshold))


def refine(
    lm: Generator,
    clf: Classifier,
    train: Sequence[DatasetRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    decode: DecodeConfig,
    mode: EncodingMode,
    metrics: Optional[MetricsLog] = None,
    threshold: float = 0.6,
) -> TrainResult:
    """Gumbel straight-through refinement; the classifier stays frozen."""
    examples = lm_examples(train, mode, model_cfg.max_len)
    if not examples:
        raise EmptyTarget("no valid training records")
    metrics = metrics or MetricsLog(None, "refine")
    clf = clf.frozen_copy()
    learned = cfg.loss_weighting == "learned"
    s1 = ad.parameter(cfg.s1_init)
    s2 = ad.parameter(cfg.s2_init)
    opt = AdamW.from_config(lm.parameters() + ([s1, s2] if learned else []), cfg)
    rng = np.random.default_rng(cfg.seed)

    def select(epoch: int) -> float:
        return classifier_valid_fraction(lm, clf, decode, cfg.eval_samples, cfg.seed + epoch, threshold)

    best_state = lm.state()
    best_score = select(-1) if cfg.eval_samples else -math.inf
    best_epoch = -1
    step = 0
    current_epoch = 0

    def end_epoch(epoch: int) -> None:
        nonlocal best_state, best_score, best_epoch
        if not cfg.eval_samples:
            best_state, best_epoch = lm.state(), epoch
            return
        score = select(epoch)
        log_data = {"event": "refine-epoch", "epoch": epoch, "clf_valid_fraction": score}
        logger.info(json.dumps(log_data))
        if score > best_score:
            best_state, best_score, best_epoch = lm.state(), score, epoch

    for epoch, idx in _batches(len(examples), cfg, cfg.refine_epochs, rng):
        if epoch != current_epoch:
            end_epoch(current_epoch)
            current_epoch = epoch
        batch = [examples[i] for i in idx]
        roll_rng = np.random.default_rng([cfg.seed, step, 1])
        prompts = [prompt_ids(sample_pool(roll_rng)) for _ in range(cfg.rollout_batch)]
        tau = cfg.tau_at(step)

        if learned:
            nll = lm_nll(lm, batch, _dropout_rng(cfg, step, lm.cfg.dropout), VOCAB.pad_id)
            l_valid, mean_p = validity_loss(lm, clf, prompts, roll_rng, tau, decode.max_len)
            total = ad.exp(-s1) * nll + s1 + ad.exp(-s2) * l_valid + s2
            _check(total, "refine", step)
            opt.zero_grad()
            total.backward()
            clip_grad_norm(lm.parameters(), cfg.grad_clip)
            opt.step()
            nll_value, lambdas = nll.item(), (math.exp(-s1.item()), math.exp(-s2.item()))
        else:
            nll_value = _nll_step(lm, opt, batch, cfg, step, "refine")
            with ad.no_grad():
                l_valid, mean_p = validity_loss(lm, clf, prompts, roll_rng, tau, decode.max_len)
            lambdas = (1.0, 0.0)

        metrics.record(StepMetrics(step, L_LLM=nll_value, L_valid=l_valid.item(),
                                   lambda1=lambdas[0], lambda2=lambdas[1], mean_p_valid=mean_p))
        step += 1
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if step:
        end_epoch(current_epoch)

    lm.load_state(best_state)
    weights = {"s1": s1.item(), "s2": s2.item()}
    log_data = {"event": "refine", "steps": step, "best_epoch": best_epoch, "clf_valid_fraction": best_score, **weights}
    logger.info(json.dumps(log_data))
    return TrainResult(lm, metrics.history, best_epoch, best_score, weights)
