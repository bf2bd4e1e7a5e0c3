"""
The two networks.

Generator: decoder-only pre-LN transformer over the token vocabulary. Its
output head is zero-initialized, so an untrained generator is exactly
uniform (NLL = ln|V|).

Classifier: soft token embedding (distribution rows x embedding matrix) plus
positional embedding, `clf_layers` bidirectional pre-LN blocks with PAD keys
masked, mean-pool over non-PAD positions, GELU MLP, sigmoid. Id input is
turned into one-hot rows and takes the same path. Zero-initialized head:
p_valid = 0.5 at init.
"""

import copy
import json
import logging
from typing import Optional, Sequence

import numpy as np

from app.core import autodiff as ad
from app.core.autodiff import Tensor
from app.core.errors import NonStochasticRows, SequenceTooLong, ShapeMismatch
from app.schemas.config import ModelConfig

logger = logging.getLogger(__name__)

Params = dict[str, Tensor]

_ROW_SUM_TOL = 1e-9


def count_parameters(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: Optional[int] = None) -> np.ndarray:
    length = max((len(s) for s in seqs), default=0) if length is None else length
    out = np.full((len(seqs), length), pad_id, dtype=np.int64)
    for i, seq in enumerate(seqs):
        out[i, :len(seq)] = seq
    return out


# ==================== Shared blocks ====================


def _block_params(prefix: str, d: int, rng: np.random.Generator, std: float) -> Params:
    def w(*shape):
        return ad.parameter(rng.normal(0.0, std, size=shape))

    def zeros(*shape):
        return ad.parameter(np.zeros(shape))

    def ones(*shape):
        return ad.parameter(np.ones(shape))

    return {
        f"{prefix}.ln1.g": ones(d),
        f"{prefix}.ln1.b": zeros(d),
        f"{prefix}.attn.w_qkv": w(d, 3 * d),
        f"{prefix}.attn.b_qkv": zeros(3 * d),
        f"{prefix}.attn.w_o": w(d, d),
        f"{prefix}.attn.b_o": zeros(d),
        f"{prefix}.ln2.g": ones(d),
        f"{prefix}.ln2.b": zeros(d),
        f"{prefix}.mlp.w1": w(d, 4 * d),
        f"{prefix}.mlp.b1": zeros(4 * d),
        f"{prefix}.mlp.w2": w(4 * d, d),
        f"{prefix}.mlp.b2": zeros(d),
    }


def _attention(x: Tensor, p: Params, prefix: str, n_heads: int, blocked: np.ndarray) -> Tensor:
    """Multi-head self-attention; `blocked` broadcasts to (B, H, T, T), True = masked."""
    b, t, d = x.shape
    dh = d // n_heads
    qkv = x @ p[f"{prefix}.attn.w_qkv"] + p[f"{prefix}.attn.b_qkv"]

    def heads(part: int) -> Tensor:
        sl = qkv[:, :, part * d:(part + 1) * d]
        return ad.transpose(sl.reshape(b, t, n_heads, dh), (0, 2, 1, 3))

    q, k, v = heads(0), heads(1), heads(2)
    scores = (q @ ad.transpose(k)) * (1.0 / np.sqrt(dh))
    weights = ad.softmax(ad.masked_fill(scores, blocked, ad.NEG_INF), axis=-1)
    out = ad.transpose(weights @ v, (0, 2, 1, 3)).reshape(b, t, d)
    return out @ p[f"{prefix}.attn.w_o"] + p[f"{prefix}.attn.b_o"]


def _block(x: Tensor, p: Params, prefix: str, n_heads: int, blocked: np.ndarray,
           dropout: float, rng: Optional[np.random.Generator]) -> Tensor:
    h = ad.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = x + ad.dropout(_attention(h, p, prefix, n_heads, blocked), dropout, rng)
    h = ad.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = ad.gelu(h @ p[f"{prefix}.mlp.w1"] + p[f"{prefix}.mlp.b1"])
    h = h @ p[f"{prefix}.mlp.w2"] + p[f"{prefix}.mlp.b2"]
    return x + ad.dropout(h, dropout, rng)


def _n_blocks(params: Params) -> int:
    indices = {int(name.split(".")[1]) for name in params if name.startswith("blocks.")}
    return len(indices)


class _Model:
    params: Params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return count_parameters(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = False

    def frozen_copy(self):
        """Same model over copied, gradient-free parameters; the original is untouched."""
        clone = copy.copy(self)
        clone.params = {name: Tensor(p.data.copy()) for name, p in self.params.items()}
        return clone

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: {state[name].shape} vs {p.shape}")
            p.data = state[name].copy()

    def _log_size(self, kind: str) -> None:
        log_data = {"event": "model", "kind": kind, "parameters": self.n_params()}
        logger.info(json.dumps(log_data))


# ==================== Generator ====================


class Generator(_Model):
    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0, params: Optional[Params] = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        if params is None:
            rng = np.random.default_rng(seed)
            d, std = cfg.d_model, cfg.init_std
            params = {
                "tok_emb": ad.parameter(rng.normal(0.0, std, size=(vocab_size, d))),
                "pos_emb": ad.parameter(rng.normal(0.0, std, size=(cfg.max_len, d))),
            }
            for layer in range(cfg.n_layers):
                params.update(_block_params(f"blocks.{layer}", d, rng, std))
            params["ln_f.g"] = ad.parameter(np.ones(d))
            params["ln_f.b"] = ad.parameter(np.zeros(d))
            params["head.w"] = ad.parameter(np.zeros((d, vocab_size)))
            params["head.b"] = ad.parameter(np.zeros(vocab_size))
        self.params = params
        self.n_layers = _n_blocks(params)
        self._log_size("generator")

    @property
    def max_len(self) -> int:
        return self.params["pos_emb"].shape[0]

    def forward(self, ids: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, T) ids -> (B, T, |V|) logits; row t scores the token at t+1."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        b, t = ids.shape
        if t > self.max_len:
            raise SequenceTooLong(f"sequence of {t} tokens exceeds {self.max_len}")
        p = self.params
        x = ad.embedding_lookup(p["tok_emb"], ids) + p["pos_emb"][:t]
        x = ad.dropout(x, self.cfg.dropout, rng)
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)
        for layer in range(self.n_layers):
            x = _block(x, p, f"blocks.{layer}", self.cfg.n_heads, causal, self.cfg.dropout, rng)
        x = ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        return x @ p["head.w"] + p["head.b"]


def lm_forward(model: Generator, tokens: Sequence[int]) -> Tensor:
    """Single sequence -> (len, |V|) logits."""
    logits = model.forward(np.asarray(tokens, dtype=np.int64)[None, :])
    return logits[0]


def lm_batch(examples: Sequence[tuple[Sequence[int], int]], pad_id: int = 0
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing inputs, targets and target mask for (ids, sep_index) examples.

    Only positions predicting tokens after SEP are scored; PAD is never scored.
    """
    ids = pad_batch([seq for seq, _ in examples], pad_id)
    inputs, targets = ids[:, :-1], ids[:, 1:]
    mask = np.zeros(targets.shape)
    for i, (seq, sep) in enumerate(examples):
        mask[i, sep:len(seq) - 1] = 1.0
    return inputs, targets, mask


def lm_nll(model: Generator, examples: Sequence[tuple[Sequence[int], int]],
           rng: Optional[np.random.Generator] = None, pad_id: int = 0) -> Tensor:
    inputs, targets, mask = lm_batch(examples, pad_id)
    return ad.cross_entropy(model.forward(inputs, rng), targets, mask)


# ==================== Classifier ====================


class Classifier(_Model):
    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0, params: Optional[Params] = None,
                 pad_id: int = 0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        if params is None:
            rng = np.random.default_rng(seed)
            d, std = cfg.clf_dim, cfg.init_std
            params = {
                "tok_emb": ad.parameter(rng.normal(0.0, std, size=(vocab_size, d))),
                "pos_emb": ad.parameter(rng.normal(0.0, std, size=(cfg.max_len, d))),
            }
            for layer in range(cfg.clf_layers):
                params.update(_block_params(f"blocks.{layer}", d, rng, std))
            params["ln_f.g"] = ad.parameter(np.ones(d))
            params["ln_f.b"] = ad.parameter(np.zeros(d))
            params["mlp.w1"] = ad.parameter(rng.normal(0.0, std, size=(d, cfg.clf_hidden)))
            params["mlp.b1"] = ad.parameter(np.zeros(cfg.clf_hidden))
            params["head.w"] = ad.parameter(np.zeros((cfg.clf_hidden, 1)))
            params["head.b"] = ad.parameter(np.zeros(1))
        self.params = params
        self.n_layers = _n_blocks(params)
        self._log_size("classifier")

    @property
    def max_len(self) -> int:
        return self.params["pos_emb"].shape[0]

    def forward_dist(self, dist, valid: Optional[np.ndarray] = None,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, T, |V|) row-stochastic matrix -> (B,) p_valid; `valid` marks non-PAD positions."""
        dist = ad.as_tensor(dist)
        if dist.ndim != 3 or dist.shape[-1] != self.vocab_size:
            raise ShapeMismatch(f"classifier input must be (B, T, {self.vocab_size}), got {dist.shape}")
        b, t, _ = dist.shape
        if t > self.max_len:
            raise SequenceTooLong(f"sequence of {t} tokens exceeds {self.max_len}")
        if np.any(np.abs(dist.data.sum(axis=-1) - 1.0) > _ROW_SUM_TOL):
            raise NonStochasticRows("distribution rows must sum to 1")
        valid = np.ones((b, t), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        if valid.shape != (b, t):
            raise ShapeMismatch(f"valid mask {valid.shape} vs input {(b, t)}")

        p = self.params
        x = ad.soft_embedding(dist, p["tok_emb"]) + p["pos_emb"][:t]
        blocked = ~valid[:, None, None, :]
        for layer in range(self.n_layers):
            x = _block(x, p, f"blocks.{layer}", self.cfg.clf_heads, blocked, self.cfg.dropout, rng)
        x = ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        weights = valid / np.maximum(valid.sum(axis=1, keepdims=True), 1)
        pooled = (x * weights[:, :, None]).sum(axis=1)
        h = ad.gelu(pooled @ p["mlp.w1"] + p["mlp.b1"])
        logit = (h @ p["head.w"] + p["head.b"]).reshape(b)
        return ad.sigmoid(logit)

    def forward_ids(self, ids: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, T) PAD-padded ids -> (B,) p_valid through the one-hot soft path."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        return self.forward_dist(ad.one_hot(ids, self.vocab_size), ids != self.pad_id, rng)


def clf_forward(model: Classifier, x) -> float:
    """p_valid for one id sequence (1-D ints) or one distribution matrix (2-D floats)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    with ad.no_grad():
        if arr.ndim == 1:
            return model.forward_ids(arr[None, :]).item()
        if arr.ndim == 2:
            return model.forward_dist(arr[None, :, :]).item()
    raise ShapeMismatch(f"classifier input must be 1-D ids or a 2-D distribution, got {arr.shape}")
