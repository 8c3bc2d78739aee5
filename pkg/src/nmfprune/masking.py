"""Score thresholding, binary masks, and the global-sparsity gamma search.

Each layer gets its own threshold from its score statistics: mean + gamma*std
("std" mode) or median + gamma*mad ("mad" mode). One shared scaling factor
``gamma`` therefore controls how aggressively every layer prunes; a bisection
search tunes it until the global fraction of pruned weights hits a target.
Scores at or above the threshold are kept (ties survive).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix import check_matrix, stats
from .nmf import ScoreMatrix

T_TYPES = ("std", "mad")

# Floor applied to a probed gamma inside the search, never to user config.
_GAMMA_FLOOR = 1e-6


def _validate_t_type(t_type: str) -> str:
    t = t_type.lower()
    if t not in T_TYPES:
        raise ValueError(f"unknown threshold type {t_type!r}, expected one of {T_TYPES}")
    return t


@dataclass(frozen=True)
class ThresholdConfig:
    """Threshold rule: which dispersion statistic, and its scaling factor."""

    t_type: str
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "t_type", _validate_t_type(self.t_type))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass
class Mask:
    """Binary keep/prune mask for one layer; entries are exactly 0.0 or 1.0."""

    layer_id: str
    bits: np.ndarray


@dataclass(frozen=True)
class GammaSearchConfig:
    """Parameters of the bisection search for the global-sparsity target."""

    s_target: float
    epsilon_sparsity: float = 0.005
    n_search: int = 30
    gamma_min: float = 0.01
    gamma_max: float = 10.0
    gamma_guess: float = 1.0
    epsilon_gamma_conv: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.s_target < 1.0:
            raise ValueError(f"s_target must be in (0, 1), got {self.s_target}")
        if not 0.0 < self.epsilon_sparsity < 1.0:
            raise ValueError(f"epsilon_sparsity must be in (0, 1), got {self.epsilon_sparsity}")
        if self.n_search < 1:
            raise ValueError(f"n_search must be >= 1, got {self.n_search}")
        if not self.gamma_min < self.gamma_max:
            raise ValueError(
                f"gamma_min must be < gamma_max, got [{self.gamma_min}, {self.gamma_max}]"
            )


@dataclass(frozen=True)
class LayerSparsity:
    zeros: int
    total: int
    sparsity: float


@dataclass
class SparsityReport:
    """Per-layer and pooled zero-weight accounting."""

    per_layer: dict[str, LayerSparsity]
    global_zeros: int
    global_total: int
    global_sparsity: float


@dataclass(frozen=True)
class GammaTraceEntry:
    """One probe of the search: iteration 0 is the initial-guess evaluation."""

    iteration: int
    gamma: float
    achieved: float
    gamma_low: float
    gamma_high: float


@dataclass
class GammaSearchResult:
    gamma_star: float
    achieved: float
    hit_target: bool  # False means best-so-far was returned outside tolerance
    iterations: int
    trace: list[GammaTraceEntry] = field(default_factory=list)


def layer_threshold(scores: ScoreMatrix, cfg: ThresholdConfig) -> float:
    """Pruning threshold for one layer from its own score statistics."""
    st = stats(scores.scores)
    if cfg.t_type == "std":
        return st.mean + cfg.gamma * st.std
    return st.median + cfg.gamma * st.mad


def generate_mask(scores: ScoreMatrix, threshold: float) -> Mask:
    """Keep (1.0) every score >= threshold, prune (0.0) the rest."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    check_matrix(scores.scores, "scores")
    bits = (scores.scores >= threshold).astype(np.float64)
    return Mask(layer_id=scores.layer_id, bits=bits)


def generate_all_masks(
    all_scores: dict[str, ScoreMatrix], t_type: str, gamma: float
) -> dict[str, Mask]:
    """Final masks for every layer at one shared gamma."""
    cfg = ThresholdConfig(t_type=t_type, gamma=gamma)
    return {
        layer_id: generate_mask(sm, layer_threshold(sm, cfg))
        for layer_id, sm in all_scores.items()
    }


def global_sparsity(masks: dict[str, Mask]) -> SparsityReport:
    """Exact zero counts per layer and pooled across all layers."""
    if not masks:
        raise ValueError("cannot compute sparsity of an empty mask set")
    per_layer: dict[str, LayerSparsity] = {}
    global_zeros = 0
    global_total = 0
    for layer_id, mask in masks.items():
        zeros = int(np.count_nonzero(mask.bits == 0.0))
        total = int(mask.bits.size)
        per_layer[layer_id] = LayerSparsity(zeros=zeros, total=total, sparsity=zeros / total)
        global_zeros += zeros
        global_total += total
    return SparsityReport(
        per_layer=per_layer,
        global_zeros=global_zeros,
        global_total=global_total,
        global_sparsity=global_zeros / global_total,
    )


def _sparsity_at(all_scores: dict[str, ScoreMatrix], t_type: str, gamma: float) -> float:
    """Global sparsity if masks were generated at ``gamma`` (masks not kept)."""
    cfg = ThresholdConfig(t_type=t_type, gamma=gamma)
    zeros = 0
    total = 0
    for sm in all_scores.values():
        tau = layer_threshold(sm, cfg)
        zeros += int(np.count_nonzero(sm.scores < tau))
        total += sm.scores.size
    return zeros / total


def tune_gamma(
    all_scores: dict[str, ScoreMatrix], t_type: str, cfg: GammaSearchConfig
) -> GammaSearchResult:
    """Bisect gamma on [gamma_min, gamma_max] to hit the sparsity target.

    Each iteration probes the bracket midpoint (floored at 1e-6), measures the
    global sparsity it would achieve, and narrows the bracket: too little
    pruning raises the lower edge, too much lowers the upper edge. Returns as
    soon as a probe lands within ``epsilon_sparsity`` of the target, or stops
    early when the bracket's relative width drops below
    ``epsilon_gamma_conv``. If no probe reaches tolerance, the closest gamma
    seen is returned with ``hit_target=False``; the best-so-far slot starts at
    ``gamma_guess``, so a search that never improves on it hands it back.
    """
    if not all_scores:
        raise ValueError("cannot tune gamma with no score matrices")
    t = _validate_t_type(t_type)

    lo = cfg.gamma_min
    hi = cfg.gamma_max
    gamma_best = cfg.gamma_guess
    s_closest = _sparsity_at(all_scores, t, cfg.gamma_guess)
    trace = [GammaTraceEntry(0, cfg.gamma_guess, s_closest, lo, hi)]

    iterations = 0
    for it in range(1, cfg.n_search + 1):
        iterations = it
        gamma = (lo + hi) / 2.0
        if gamma < _GAMMA_FLOOR:
            gamma = _GAMMA_FLOOR
        achieved = _sparsity_at(all_scores, t, gamma)
        trace.append(GammaTraceEntry(it, gamma, achieved, lo, hi))
        if abs(achieved - cfg.s_target) < abs(s_closest - cfg.s_target):
            s_closest = achieved
            gamma_best = gamma
        if abs(achieved - cfg.s_target) <= cfg.epsilon_sparsity:
            return GammaSearchResult(
                gamma_star=gamma,
                achieved=achieved,
                hit_target=True,
                iterations=it,
                trace=trace,
            )
        if achieved < cfg.s_target:
            lo = gamma  # too little pruning: push thresholds up
        else:
            hi = gamma  # too much pruning: pull thresholds down
        if (hi - lo) / ((hi + lo) / 2.0 + 1e-9) < cfg.epsilon_gamma_conv:
            break

    return GammaSearchResult(
        gamma_star=gamma_best,
        achieved=s_closest,
        hit_target=abs(s_closest - cfg.s_target) <= cfg.epsilon_sparsity,
        iterations=iterations,
        trace=trace,
    )


def apply_initial_pruning(weights: dict[str, np.ndarray], masks: dict[str, Mask]) -> None:
    """Zero masked positions in place: W <- W * M for every masked layer.

    Layers in ``weights`` without a mask are left untouched; a mask without a
    matching weight matrix is an error.
    """
    for layer_id, mask in masks.items():
        if layer_id not in weights:
            raise ValueError(f"mask for unknown layer {layer_id!r}")
        w = weights[layer_id]
        if w.shape != mask.bits.shape:
            raise ValueError(
                f"mask shape {mask.bits.shape} does not match weights "
                f"{w.shape} for layer {layer_id!r}"
            )
        w *= mask.bits
