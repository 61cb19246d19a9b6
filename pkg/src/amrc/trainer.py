"""Training loop: Adam with cosine learning-rate decay, early stopping on
validation prediction MSE, best-checkpoint restore.

Every stochastic choice derives from the config seed through independent
child streams (model init uses the seed directly; epoch shuffling and mask
sampling use spawned children), so a run is reproducible bit for bit on one
platform and enabling the auxiliary terms never perturbs the baseline
randomness. Each step with the masking term active costs m + 1 batched
forward passes for candidate evaluation plus at most one more to collect
the selected masked representations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import backend, forecaster, masking
from .errors import NumericError, ValidationError
from .ingest import WindowSample, stack_windows
from .objectives import BatchObjective, LossBreakdown

CANDIDATE_DRAWS = ("batch", "epoch")


@dataclass
class TrainConfig:
    L: int
    H: int
    batch_size: int = 32
    max_epochs: int = 100
    lr0: float = 1e-4
    patience: int = 20
    m: int = 12
    lam_aml: float = 1.0
    lam_esp: float = 1.0
    tap_selection: str | list = "all"
    seed: int = 0
    amrc_enabled: bool = True
    candidate_draw: str = "batch"
    masked_branch_grad: bool = False
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be > 0, got {self.lr0}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lam_aml < 0 or self.lam_esp < 0:
            raise ValidationError("lambdas must be non-negative")
        if self.amrc_enabled and self.lam_aml > 0 and self.m < 1:
            raise ValidationError("m must be >= 1 when the masking term is active")
        if self.candidate_draw not in CANDIDATE_DRAWS:
            raise ValidationError(
                f"candidate_draw must be one of {CANDIDATE_DRAWS}, "
                f"got {self.candidate_draw!r}"
            )
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValidationError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_pred: float
    train_aml: float
    train_esp: float
    train_total: float
    val_mse: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val(self) -> float:
        return self.records[self.best_epoch].val_mse

    def loss_rows(self) -> list[tuple]:
        """Deterministic per-epoch columns (wall time excluded; timings are
        a measurement, not a function of the config)."""
        return [
            (r.epoch, r.train_pred, r.train_aml, r.train_esp, r.train_total,
             r.val_mse, r.lr)
            for r in self.records
        ]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, p: int) -> "AdamState":
        return cls(m=np.zeros(p), v=np.zeros(p))


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector and
    advances the moment state in place."""
    if params.shape != grad.shape:
        raise ValidationError(f"param/grad shape mismatch: {params.shape} vs {grad.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient in adam_step")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    return params - lr * mhat / (np.sqrt(vhat) + eps)


def cosine_lr(epoch: int, max_epochs: int, lr0: float) -> float:
    """Cosine decay from lr0 at epoch 0 toward 0 at epoch max_epochs."""
    if not 0 <= epoch < max_epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {max_epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / max_epochs))


def _val_mse(model: forecaster.ForecastModel, Xval, Yval) -> float:
    from .reporting import mse_mae

    yhat, _, _ = forecaster.forward_batch(model, Xval)
    return mse_mae(yhat, Yval)[0]


def train(
    model: forecaster.ForecastModel,
    train_windows: list[WindowSample],
    val_windows: list[WindowSample],
    config: TrainConfig,
) -> tuple[forecaster.ForecastModel, TrainHistory]:
    """Run the full protocol and return the model restored to its best
    validation epoch along with the per-epoch history."""
    if not train_windows or not val_windows:
        raise ValidationError("empty train or val window set")
    Xtr, Ytr = stack_windows(train_windows)
    Xval, Yval = stack_windows(val_windows)
    for name, arr, length in (
        ("train x", Xtr, config.L), ("train y", Ytr, config.H),
        ("val x", Xval, config.L), ("val y", Yval, config.H),
    ):
        if arr.shape[1] != length or arr.shape[2] != model.D:
            raise ValidationError(
                f"{name} windows have shape {arr.shape[1:]}, expected "
                f"({length}, {model.D})"
            )
    if model.L != config.L or model.H != config.H:
        raise ValidationError(
            f"model dims (L={model.L}, H={model.H}) do not match config "
            f"(L={config.L}, H={config.H})"
        )

    _, shuffle_ss, mask_ss = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    mask_rng = np.random.default_rng(mask_ss)

    use_aml = config.amrc_enabled and config.lam_aml > 0
    lam_aml = config.lam_aml if config.amrc_enabled else 0.0
    lam_esp = config.lam_esp if config.amrc_enabled else 0.0

    n_train = Xtr.shape[0]
    adam = AdamState.zeros(model.params.shape[0])
    history = TrainHistory()
    best_val = math.inf
    best_params = forecaster.get_params(model)

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, config.max_epochs, config.lr0)
        perm = shuffle_rng.permutation(n_train)
        ks_epoch = None
        if use_aml and config.candidate_draw == "epoch":
            ks_epoch = masking.sample_mask_indices(config.m, config.L, mask_rng)
        sums = np.zeros(4)  # pred, aml, esp, total weighted by batch size
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = Xtr[idx]
            yb = Ytr[idx]
            ks = None
            if use_aml:
                ks = (
                    ks_epoch
                    if ks_epoch is not None
                    else masking.sample_mask_indices(config.m, config.L, mask_rng)
                )
            obj = BatchObjective(
                xb,
                yb,
                ks=ks,
                lam_aml=lam_aml,
                lam_esp=lam_esp,
                tap_selection=config.tap_selection,
                masked_branch_grad=config.masked_branch_grad,
            )
            try:
                breakdown, grad = obj.value_and_grad(model)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} (epoch {epoch}, batch starting at {start})"
                ) from None
            if not math.isfinite(breakdown.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            if config.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > config.grad_clip:
                    grad = grad * (config.grad_clip / norm)
            forecaster.set_params(model, adam_step(model.params, grad, adam, lr))
            w = idx.shape[0]
            sums += w * np.array(
                [breakdown.pred, breakdown.aml, breakdown.esp, breakdown.total]
            )
        means = sums / n_train
        val_mse = _val_mse(model, Xval, Yval)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_pred=float(means[0]),
                train_aml=float(means[1]),
                train_esp=float(means[2]),
                train_total=float(means[3]),
                val_mse=val_mse,
                lr=lr,
                seconds=time.perf_counter() - t0,
            )
        )
        if val_mse < best_val:
            best_val = val_mse
            history.best_epoch = epoch
            best_params = forecaster.get_params(model)
        elif epoch - history.best_epoch >= config.patience:
            break

    forecaster.set_params(model, best_params)
    return model, history
