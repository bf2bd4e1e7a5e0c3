"""
Autoregressive decoding with temperature, top-k and nucleus filtering.

Filter order is fixed: temperature scale -> keep top_k -> nucleus cut at
cumulative top_p -> renormalize -> draw. Each batch row draws from its own
generator, so a row's output does not depend on the rest of the batch.
"""

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.special import softmax

from app.core import autodiff as ad
from app.core.circuit import ComponentPool
from app.core.encoding import VOCAB, prompt_ids
from app.core.models import Generator, pad_batch
from app.schemas.config import DecodeConfig


def filter_probs(logits: np.ndarray, temperature: float = 1.0, top_k: Optional[int] = None,
                 top_p: float = 1.0) -> np.ndarray:
    """(..., V) logits -> filtered, renormalized probabilities."""
    probs = softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=-1)
    order = np.argsort(-probs, axis=-1, kind="stable")
    ranked = np.take_along_axis(probs, order, axis=-1)
    if top_k is not None and top_k < ranked.shape[-1]:
        ranked[..., top_k:] = 0.0
        ranked /= ranked.sum(axis=-1, keepdims=True)
    if top_p < 1.0:
        before = np.cumsum(ranked, axis=-1) - ranked
        ranked = np.where(before > top_p, 0.0, ranked)
        ranked /= ranked.sum(axis=-1, keepdims=True)
    out = np.zeros_like(probs)
    np.put_along_axis(out, order, ranked, axis=-1)
    return out


def draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from one probability row."""
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(index, probs.size - 1)


def _generate(model: Generator, prompts: Sequence[Sequence[int]], max_new: int,
              choose) -> list[list[int]]:
    """Shared decode loop; choose(row, logits_row) picks the next token id."""
    eos = VOCAB.eos_id
    seqs = [list(p) for p in prompts]
    out: list[list[int]] = [[] for _ in prompts]
    active = list(range(len(prompts)))
    with ad.no_grad():
        for _ in range(max_new):
            active = [i for i in active if len(seqs[i]) < model.max_len]
            if not active:
                break
            batch = pad_batch([seqs[i] for i in active], VOCAB.pad_id)
            logits = model.forward(batch).data
            still = []
            for row, i in enumerate(active):
                token = choose(i, logits[row, len(seqs[i]) - 1])
                seqs[i].append(token)
                out[i].append(token)
                if token != eos:
                    still.append(i)
            active = still
    return out


def sample_batch(model: Generator, prompts: Sequence[Sequence[int]], decode: DecodeConfig,
                 rngs: Sequence[np.random.Generator]) -> list[list[int]]:
    """Generated ids after SEP (through EOS when produced) for each prompt."""
    def choose(i: int, row: np.ndarray) -> int:
        probs = filter_probs(row, decode.temperature, decode.top_k, decode.top_p)
        return draw(probs, rngs[i])

    return _generate(model, prompts, decode.max_len, choose)


def sample(model: Generator, prompt: Sequence[int], decode: DecodeConfig) -> list[int]:
    return sample_batch(model, [prompt], decode, [np.random.default_rng(decode.seed)])[0]


@dataclass(frozen=True)
class Rollout:
    """Gumbel-max rollout: hard tokens and the noise that produced each of them."""
    tokens: list[list[int]]
    noise: list[np.ndarray]  # per row, (len(tokens), V)


def gumbel_rollout(model: Generator, prompts: Sequence[Sequence[int]], max_new: int,
                   rng: np.random.Generator) -> Rollout:
    noise: list[list[np.ndarray]] = [[] for _ in prompts]

    def choose(i: int, row: np.ndarray) -> int:
        z = rng.gumbel(size=row.shape)
        noise[i].append(z)
        return int(np.argmax(row + z))

    tokens = _generate(model, prompts, max_new, choose)
    stacked = [np.stack(z) if z else np.zeros((0, model.vocab_size)) for z in noise]
    return Rollout(tokens, stacked)


class TopologySampler(Protocol):
    """Produces generated token ids for a batch of component pools."""

    def generate(self, pools: Sequence[ComponentPool], rngs: Sequence[np.random.Generator]) -> list[list[int]]:
        ...


class LMSampler:
    def __init__(self, model: Generator, decode: DecodeConfig):
        self.model = model
        self.decode = decode

    def generate(self, pools: Sequence[ComponentPool], rngs: Sequence[np.random.Generator]) -> list[list[int]]:
        return sample_batch(self.model, [prompt_ids(p) for p in pools], self.decode, rngs)
