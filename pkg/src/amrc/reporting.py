"""Evaluation metrics and prefix-redundancy diagnostics.

The mask scan reproduces the diagnostic trio: unmasked MSE, MSE* (per
sample, the better of the unmasked loss and the best loss over every mask
length), and the ratio of samples whose loss strictly improves under some
mask. Run on a plainly trained model the ratio quantifies learned prefix
redundancy; run again after training with the masking objective it is the
"after" figure a redundancy-suppression claim compares against.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import forecaster
from .errors import ValidationError
from .ingest import WindowSample, stack_windows


@dataclass
class MetricsReport:
    mse: float
    mae: float
    n_samples: int
    horizon: int
    split: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskScanReport:
    mse_unmasked: float
    mse_star: float
    ratio: float
    kstar_histogram: np.ndarray  # counts over k = 1..L, improved samples only
    split: str
    n_samples: int
    lookback: int
    horizon: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kstar_histogram"] = self.kstar_histogram.tolist()
        return d


def mse_mae(yhat: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Means over all samples and entries; the single evaluation formula
    shared with the training loop's validation monitor."""
    return float(np.mean((yhat - y) ** 2)), float(np.mean(np.abs(yhat - y)))


def evaluate(
    model: forecaster.ForecastModel,
    windows: list[WindowSample],
    H: int | None = None,
    split: str = "",
) -> MetricsReport:
    if not windows:
        raise ValidationError("empty window set")
    X, Y = stack_windows(windows)
    if H is not None and Y.shape[1] != H:
        raise ValidationError(f"windows have horizon {Y.shape[1]}, expected {H}")
    yhat, _, _ = forecaster.forward_batch(model, X)
    mse, mae = mse_mae(yhat, Y)
    return MetricsReport(
        mse=mse, mae=mae, n_samples=X.shape[0], horizon=Y.shape[1], split=split
    )


def mask_scan(
    model: forecaster.ForecastModel,
    windows: list[WindowSample],
    L: int | None = None,
    split: str = "",
) -> MaskScanReport:
    """Exhaustive per-sample mask search over k = 1..L.

    A sample counts as improved only when its best masked loss is strictly
    below its unmasked loss; ties are not improvements. MSE* takes the
    per-sample minimum of the two, so samples the mask cannot help
    contribute their unmasked loss and MSE* <= MSE always. The k* histogram
    covers improved samples only.
    """
    if not windows:
        raise ValidationError("empty window set")
    X, Y = stack_windows(windows)
    if L is not None and X.shape[1] != L:
        raise ValidationError(f"windows have lookback {X.shape[1]}, expected {L}")
    L = X.shape[1]
    ks = np.arange(0, L + 1, dtype=np.int64)
    losses = forecaster.masked_losses(model, X, Y, ks)
    unmasked = losses[:, 0]
    best = losses[:, 1:].min(axis=1)
    kstar = losses[:, 1:].argmin(axis=1) + 1  # first minimum: smallest k
    improved = best < unmasked
    star = np.minimum(unmasked, best)
    n = X.shape[0]
    hist = np.bincount(kstar[improved], minlength=L + 1)[1:]
    return MaskScanReport(
        mse_unmasked=float(np.mean(unmasked)),
        mse_star=float(np.mean(star)),
        ratio=float(improved.sum() / n),
        kstar_histogram=hist,
        split=split,
        n_samples=n,
        lookback=L,
        horizon=Y.shape[1],
    )


def compare_ratio(baseline: MaskScanReport, amrc: MaskScanReport) -> dict:
    """Before/after redundancy comparison; the claim under test is that the
    ratio drops after training with the masking objective."""
    for attr in ("split", "lookback", "horizon"):
        a, b = getattr(baseline, attr), getattr(amrc, attr)
        if a != b:
            raise ValidationError(f"reports differ in {attr}: {a!r} vs {b!r}")
    return {
        "split": baseline.split,
        "ratio": baseline.ratio,
        "ratio_star": amrc.ratio,
        "delta": baseline.ratio - amrc.ratio,
    }
