"""
Gumbel-max sampling and its softmax relaxation.

    hard = one_hot(argmax(logits + z))      z ~ Gumbel(0, 1)
    soft = softmax((logits + z) / tau)

argmax(soft) always equals the hot index of hard.
"""

from typing import Optional

import numpy as np
from scipy.special import softmax

from app.core import autodiff as ad
from app.core.autodiff import Tensor


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.gumbel(size=shape)


def gumbel_st_step(logits: np.ndarray, tau: float, rng: Optional[np.random.Generator] = None,
                   noise: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """(hard one-hot, soft relaxation) for logits of shape (..., V)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = gumbel_noise(logits.shape, rng)
    noisy = logits + noise
    hard = ad.one_hot(np.argmax(noisy, axis=-1), logits.shape[-1])
    return hard, softmax(noisy / tau, axis=-1)


def relaxed_rows(logits: Tensor, noise: np.ndarray, tau: float,
                 hard_ids: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
    """Differentiable (straight-through rows, soft rows) for fixed noise.

    hard_ids overrides the argmax, for rows whose tokens were already drawn.
    """
    soft = ad.softmax((logits + noise) * (1.0 / tau), axis=-1)
    if hard_ids is None:
        hard_ids = np.argmax(logits.data + noise, axis=-1)
    hard = ad.one_hot(hard_ids, logits.shape[-1])
    return ad.straight_through(hard, soft), soft
