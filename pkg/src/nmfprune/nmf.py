"""Non-negative matrix factorization and reconstruction-error weight scores.

A layer's absolute weight matrix is factorized as W_abs ~= F @ G with F, G
non-negative, minimizing the squared Frobenius reconstruction error via
Lee-Seung multiplicative updates. Each weight is then scored by how badly the
low-rank reconstruction approximates it: score = |W_abs - F @ G|. Weights the
factorization cannot explain carry information the dominant components miss,
so high score means keep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .matrix import abs_map, check_matrix, frobenius_sq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NmfConfig:
    """Factorization hyperparameters.

    ``epsilon`` stabilizes the multiplicative-update denominators so a factor
    row that collapses to zero cannot divide by zero.
    """

    k: int
    n_iter: int = 200
    seed: int = 0
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class NmfResult:
    """Factor pair plus the objective recorded before and after each update."""

    f: np.ndarray  # m x k_eff, non-negative
    g: np.ndarray  # k_eff x p, non-negative
    objective_trace: np.ndarray  # length n_iter + 1
    k_eff: int


@dataclass
class ScoreMatrix:
    """Per-element importance scores for one layer's flattened weights."""

    layer_id: str
    scores: np.ndarray


def factorize(w_abs: np.ndarray, cfg: NmfConfig) -> NmfResult:
    """Factorize a non-negative matrix with multiplicative updates.

    Factors are initialized from a seeded uniform draw on (0, 1] scaled by
    sqrt(mean(w_abs) / k_eff), so the initial reconstruction magnitude matches
    the data. One iteration updates F then G:

        F <- F * (W @ G.T) / (F @ G @ G.T + eps)
        G <- G * (F.T @ W) / (F.T @ F @ G + eps)

    which keeps both factors non-negative and the objective non-increasing.
    The requested rank is clamped to min(k, rows, cols) when the matrix is
    smaller than k in either dimension.
    """
    check_matrix(w_abs, "w_abs")
    if np.any(w_abs < 0):
        raise ValueError(f"w_abs must be non-negative, min is {w_abs.min()}")

    m, p = w_abs.shape
    k_eff = min(cfg.k, m, p)
    if k_eff < cfg.k:
        log.info("clamping rank from %d to %d for a %dx%d matrix", cfg.k, k_eff, m, p)

    rng = np.random.default_rng(cfg.seed)
    scale = np.sqrt(w_abs.mean() / k_eff)
    # 1 - random() lands in (0, 1], so no factor entry starts at exactly zero.
    f = (1.0 - rng.random((m, k_eff))) * scale
    g = (1.0 - rng.random((k_eff, p))) * scale

    eps = cfg.epsilon
    trace = np.empty(cfg.n_iter + 1)
    trace[0] = frobenius_sq(w_abs - f @ g)
    for it in range(cfg.n_iter):
        f *= (w_abs @ g.T) / (f @ g @ g.T + eps)
        g *= (f.T @ w_abs) / (f.T @ f @ g + eps)
        trace[it + 1] = frobenius_sq(w_abs - f @ g)
    return NmfResult(f=f, g=g, objective_trace=trace, k_eff=k_eff)


def score_layer(w: np.ndarray, cfg: NmfConfig, layer_id: str = "layer") -> ScoreMatrix:
    """Score a layer's weights by absolute reconstruction error.

    Operates on |w| only (the result is invariant under sign flips of the
    weights) and never mutates ``w``.
    """
    w_abs = abs_map(w)
    result = factorize(w_abs, cfg)
    scores = np.abs(w_abs - result.f @ result.g)
    return ScoreMatrix(layer_id=layer_id, scores=scores)
