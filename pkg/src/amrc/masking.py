"""Prefix masking: the operator itself, stochastic candidate sampling, the
exhaustive optimal-mask oracle and per-sample candidate selection.

A mask length k zeroes the k oldest rows of a lookback window (k = 0 is the
identity). Masking happens on normalized inputs, so "zero" is the
train-split channel mean. Ties are always broken toward the smaller mask
length so runs are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forecaster
from .errors import ValidationError
from .ingest import WindowSample


def apply_prefix_mask(x: np.ndarray, k: int) -> np.ndarray:
    """Zero the oldest k timesteps of x (L, D), preserving shape."""
    x = np.asarray(x)
    L = x.shape[0]
    if not 0 <= k <= L:
        raise ValidationError(f"mask length {k} out of range [0, {L}]")
    out = x.astype(np.float64, copy=True)
    out[:k] = 0.0
    return out


def apply_prefix_mask_batch(X: np.ndarray, k: int) -> np.ndarray:
    """Batched variant over X (n, L, D)."""
    L = X.shape[1]
    if not 0 <= k <= L:
        raise ValidationError(f"mask length {k} out of range [0, {L}]")
    out = X.astype(np.float64, copy=True)
    out[:, :k, :] = 0.0
    return out


def sample_mask_indices(m: int, L: int, rng: np.random.Generator) -> np.ndarray:
    """m independent uniform draws from {1, ..., L}; duplicates allowed."""
    if m < 1 or L < 1:
        raise ValidationError(f"need m >= 1 and L >= 1, got m={m}, L={L}")
    return rng.integers(1, L + 1, size=m, dtype=np.int64)


@dataclass
class MaskCandidateSet:
    """One training step's sampled mask lengths and their evaluation.

    ks: (m,) sampled lengths; per_sample_losses: (n, m) prediction MSE of
    each candidate per sample; unmasked_losses: (n,); best_index/best_gain:
    per-sample selected candidate and its loss gain (unmasked minus selected
    loss, negative when no candidate helps).
    """

    ks: np.ndarray
    per_sample_losses: np.ndarray
    unmasked_losses: np.ndarray
    best_index: np.ndarray
    best_gain: np.ndarray

    @property
    def m(self) -> int:
        return self.ks.shape[0]

    @property
    def n(self) -> int:
        return self.unmasked_losses.shape[0]


def _select_row(ks: np.ndarray, losses_row: np.ndarray) -> int:
    """Index of the loss-minimizing candidate; ties broken by smallest mask
    length, then smallest candidate index."""
    order = np.lexsort((np.arange(ks.shape[0]), ks, losses_row))
    return int(order[0])


def select_best_candidate(
    candidates: MaskCandidateSet, i: int
) -> tuple[int, float]:
    """(s*_i, gain_i) for sample i: the candidate maximizing the loss gain
    over the unmasked loss."""
    s = _select_row(candidates.ks, candidates.per_sample_losses[i])
    gain = float(candidates.unmasked_losses[i] - candidates.per_sample_losses[i, s])
    return s, gain


def evaluate_candidates(
    model: forecaster.ForecastModel,
    X: np.ndarray,
    Y: np.ndarray,
    ks: np.ndarray,
    unmasked_losses: np.ndarray | None = None,
) -> MaskCandidateSet:
    """Run the masked forward passes for one batch and select per sample.

    unmasked_losses may be passed in when the caller already ran the
    unmasked forward (the training step does); otherwise they are computed
    here via the same loss path with k = 0.
    """
    ks = np.ascontiguousarray(ks, dtype=np.int64)
    if ks.size < 1:
        raise ValidationError("need at least one mask candidate")
    losses = forecaster.masked_losses(model, X, Y, ks)
    if unmasked_losses is None:
        unmasked_losses = forecaster.masked_losses(
            model, X, Y, np.zeros(1, dtype=np.int64)
        )[:, 0]
    n = losses.shape[0]
    best_index = np.empty(n, dtype=np.int64)
    for i in range(n):
        best_index[i] = _select_row(ks, losses[i])
    best_gain = unmasked_losses - losses[np.arange(n), best_index]
    return MaskCandidateSet(
        ks=ks,
        per_sample_losses=losses,
        unmasked_losses=np.asarray(unmasked_losses, dtype=np.float64),
        best_index=best_index,
        best_gain=best_gain,
    )


def optimal_mask_exhaustive(
    model: forecaster.ForecastModel, sample: WindowSample
) -> tuple[int, float]:
    """Exact minimizer over every mask length k in {1, ..., L}.

    Returns (k*, loss*); ties go to the smallest k. The k = 0 (unmasked)
    case is intentionally outside the search range and reported separately
    by the mask-scan diagnostics.
    """
    ks = np.arange(1, model.L + 1, dtype=np.int64)
    losses = forecaster.masked_losses(model, sample.x[None], sample.y[None], ks)[0]
    s = int(np.argmin(losses))  # first minimum: smallest k wins
    return int(ks[s]), float(losses[s])
