"""Training objectives: prediction loss, the adaptive masking loss with its
per-sample weight, the embedding-similarity penalty, and their combination.

The combined objective for a batch of n samples is

    total = pred + lam_aml * aml + lam_esp * esp

where pred is the mean per-sample prediction MSE, aml pulls each sample's
unmasked representations toward the representations of its best-performing
masked variant (weighted by the per-sample relative loss gain beta, zero
when no sampled mask helps), and esp aligns pairwise embedding distances
with pairwise target distances across the batch.

Gradients treat the masked branch as a constant target: neither beta, nor
the candidate selection, nor the masked representations receive gradient
(a config flag flips the last of these on for ablations). A term with zero
weight is skipped entirely, so with both lambdas zero the computation is
bit-for-bit the plain prediction loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend, forecaster, masking
from .errors import NumericError, ValidationError
from .forecaster import ForecastModel, TapBundle


@dataclass
class LossBreakdown:
    """Per-step decomposition. aml and esp are the raw (unweighted) term
    values; total = pred + lam_aml * aml + lam_esp * esp exactly.
    per_sample_sstar holds the selected candidate index per sample, -1 when
    the sample's weight is zero."""

    pred: float
    aml: float
    esp: float
    total: float
    per_sample_beta: np.ndarray
    per_sample_sstar: np.ndarray


def pred_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error over all entries; a batched (n, H, D) pair is
    averaged per sample first."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValidationError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if yhat.ndim == 2:
        return float(np.mean((yhat - y) ** 2))
    if yhat.ndim == 3:
        return float(np.mean(backend.mse_rows(yhat, y)))
    raise ValidationError(f"expected 2-D or 3-D arrays, got {yhat.ndim}-D")


def beta(ell: float, ell_star: float) -> float:
    """Adaptive weight max(0, (ell - ell_star) / ell); defined as 0 at
    ell = 0 (a perfect prediction needs no pull)."""
    if ell < 0 or ell_star < 0:
        raise ValidationError(f"losses must be non-negative, got {ell}, {ell_star}")
    if ell == 0.0 or ell_star >= ell:
        return 0.0
    return (ell - ell_star) / ell


def _betas(unmasked: np.ndarray, gains: np.ndarray) -> np.ndarray:
    out = np.zeros_like(unmasked)
    ok = (unmasked > 0) & (gains > 0)
    out[ok] = gains[ok] / unmasked[ok]
    return out


def _resolve_selection(model: ForecastModel, tap_selection) -> tuple[str, ...]:
    if tap_selection is None or tap_selection == "all":
        return model.tap_names
    if isinstance(tap_selection, str):
        tap_selection = (tap_selection,)
    resolved = [model.resolve_tap(name) for name in tap_selection]
    # the linear kind aliases everything onto its predictor; drop duplicates
    return tuple(dict.fromkeys(resolved))


def aml_loss(
    taps: TapBundle, taps_masked: TapBundle, beta_value: float, tap_selection="all"
) -> float:
    """Single-sample masking loss: beta times the summed size-normalized
    squared Frobenius distances between selected tap pairs."""
    names = taps.names if tap_selection in (None, "all") else tuple(tap_selection)
    acc = 0.0
    for name in names:
        z = taps[name]
        zm = taps_masked[name]
        if z.shape != zm.shape:
            raise ValidationError(
                f"tap {name!r} shape mismatch: {z.shape} vs {zm.shape}"
            )
        if beta_value == 0.0:
            continue
        diff = z - zm
        acc += float(np.sum(diff * diff)) / diff.size
    return beta_value * acc


def _esp_value(Zf: np.ndarray, Yf: np.ndarray, dz: int, dy: int):
    n = Zf.shape[0]
    dE = backend.pairwise_sqdist(Zf) / dz
    dO = backend.pairwise_sqdist(Yf) / dy
    A = dE - dO
    return float(np.abs(A).sum() / (n * n)), A


def _esp_value_and_grad(Z: np.ndarray, Y: np.ndarray):
    """Penalty value plus its gradient w.r.t. the embedding stack Z."""
    n = Z.shape[0]
    dz = Z.shape[1] * Z.shape[2]
    dy = Y.shape[1] * Y.shape[2]
    Zf = np.ascontiguousarray(Z.reshape(n, dz))
    Yf = np.ascontiguousarray(Y.reshape(n, dy))
    value, A = _esp_value(Zf, Yf, dz, dy)
    S = np.sign(A)
    r = S.sum(axis=1)
    dZf = (4.0 / (n * n * dz)) * (r[:, None] * Zf - S @ Zf)
    return value, dZf.reshape(Z.shape)


def esp_penalty(embeddings, targets) -> float:
    """Batch-pairwise consistency penalty between embedding geometry and
    target geometry, diagonal included."""
    if len(embeddings) == 0:
        raise ValidationError("empty batch")
    if len(embeddings) != len(targets):
        raise ValidationError(
            f"{len(embeddings)} embeddings vs {len(targets)} targets"
        )
    Z = np.stack([np.asarray(z, dtype=np.float64) for z in embeddings])
    Y = np.stack([np.asarray(y, dtype=np.float64) for y in targets])
    if Z.ndim != 3 or Y.ndim != 3:
        raise ValidationError("embeddings and targets must be matrices")
    n = Z.shape[0]
    Zf = np.ascontiguousarray(Z.reshape(n, -1))
    Yf = np.ascontiguousarray(Y.reshape(n, -1))
    value, _ = _esp_value(Zf, Yf, Zf.shape[1], Yf.shape[1])
    return value


def _check_taps_finite(taps: dict) -> None:
    for name, t in taps.items():
        if not np.isfinite(t).all():
            raise NumericError(f"non-finite values in tap {name!r}")


class BatchObjective:
    """The combined objective evaluated on one batch.

    ks are the shared sampled mask lengths for the step (None when the
    masking term is off); alternatively a prebuilt candidate set can be
    injected, in which case its losses and selections are honored as-is.
    """

    def __init__(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        ks: np.ndarray | None = None,
        lam_aml: float = 0.0,
        lam_esp: float = 0.0,
        tap_selection="all",
        masked_branch_grad: bool = False,
        candidates: masking.MaskCandidateSet | None = None,
    ):
        if lam_aml < 0 or lam_esp < 0:
            raise ValidationError("lambdas must be non-negative")
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.Y = np.ascontiguousarray(Y, dtype=np.float64)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValidationError(
                f"batch size mismatch: {self.X.shape[0]} vs {self.Y.shape[0]}"
            )
        if lam_aml > 0 and ks is None and candidates is None:
            raise ValidationError("mask candidates required when lam_aml > 0")
        self.ks = None if ks is None else np.ascontiguousarray(ks, dtype=np.int64)
        self.lam_aml = float(lam_aml)
        self.lam_esp = float(lam_esp)
        self.tap_selection = tap_selection
        self.masked_branch_grad = bool(masked_branch_grad)
        self.candidates = candidates

    # -- shared forward/selection stage -------------------------------

    def _prepare(self, model: ForecastModel):
        n = self.X.shape[0]
        Yhat, taps, cache = forecaster.forward_batch(model, self.X)
        _check_taps_finite(taps)
        per_mse = backend.mse_rows(Yhat, self.Y)
        state = {
            "n": n,
            "Yhat": Yhat,
            "taps": taps,
            "cache": cache,
            "per_mse": per_mse,
            "pred": float(np.mean(per_mse)),
            "betas": np.zeros(n),
            "sstar": np.full(n, -1, dtype=np.int64),
            "active": np.empty(0, dtype=np.int64),
            "cands": None,
            "sel": (),
            "masked_taps": None,
            "segments": (),
            "aml": 0.0,
        }
        if self.lam_aml == 0.0:
            return state
        cands = self.candidates
        if cands is None:
            cands = masking.evaluate_candidates(
                model, self.X, self.Y, self.ks, unmasked_losses=per_mse
            )
        betas = _betas(cands.unmasked_losses, cands.best_gain)
        active = np.flatnonzero(betas > 0)
        state.update(
            betas=betas,
            sstar=np.where(betas > 0, cands.best_index, -1),
            active=active,
            cands=cands,
            sel=_resolve_selection(model, self.tap_selection),
        )
        if active.size == 0:
            return state
        masked_taps, segments = self._gather_masked(model, cands, active, state["sel"])
        per_aml = np.zeros(n)
        for name in state["sel"]:
            z = state["taps"][name][active]
            zm = masked_taps[name][active]
            diff = z - zm
            per_aml[active] += np.einsum("nij,nij->n", diff, diff) / (
                diff.shape[1] * diff.shape[2]
            )
        state.update(
            masked_taps=masked_taps,
            segments=segments,
            aml=float(np.mean(betas * per_aml)),
        )
        return state

    def _gather_masked(self, model, cands, active, sel):
        """Forward the masked variant each active sample selected, grouped
        by distinct mask length so each length costs one batched pass."""
        n = self.X.shape[0]
        masked_taps = {
            name: np.zeros((n,) + model.tap_shape(name)) for name in sel
        }
        segments = []
        chosen_ks = cands.ks[cands.best_index[active]]
        for k in np.unique(chosen_ks):
            idx = active[chosen_ks == k]
            Xm = masking.apply_prefix_mask_batch(self.X[idx], int(k))
            _, mtaps, mcache = forecaster.forward_batch(model, Xm)
            _check_taps_finite(mtaps)
            for name in sel:
                masked_taps[name][idx] = mtaps[name]
            segments.append((idx, mcache))
        return masked_taps, tuple(segments)

    def _breakdown(self, state, esp_val: float) -> LossBreakdown:
        total = state["pred"] + self.lam_aml * state["aml"] + self.lam_esp * esp_val
        return LossBreakdown(
            pred=state["pred"],
            aml=state["aml"],
            esp=esp_val,
            total=total,
            per_sample_beta=state["betas"],
            per_sample_sstar=state["sstar"],
        )

    # -- public evaluations --------------------------------------------

    def value(self, model: ForecastModel) -> LossBreakdown:
        state = self._prepare(model)
        esp_val = 0.0
        if self.lam_esp > 0:
            Z = state["taps"][model.embedding_tap]
            n = state["n"]
            esp_val, _ = _esp_value(
                np.ascontiguousarray(Z.reshape(n, -1)),
                np.ascontiguousarray(self.Y.reshape(n, -1)),
                Z.shape[1] * Z.shape[2],
                self.Y.shape[1] * self.Y.shape[2],
            )
        return self._breakdown(state, esp_val)

    def value_and_grad(self, model: ForecastModel):
        state = self._prepare(model)
        n = state["n"]
        taps = state["taps"]
        tap_grads: dict[str, np.ndarray] = {}

        def _add(name, g):
            if name in tap_grads:
                tap_grads[name] = tap_grads[name] + g
            else:
                tap_grads[name] = g

        esp_val = 0.0
        if self.lam_esp > 0:
            zname = model.embedding_tap
            esp_val, dZ = _esp_value_and_grad(taps[zname], self.Y)
            _add(zname, self.lam_esp * dZ)

        extra_grad = None
        active = state["active"]
        if self.lam_aml > 0 and active.size:
            betas = state["betas"]
            masked_taps = state["masked_taps"]
            masked_grads: dict[str, np.ndarray] = {}
            for name in state["sel"]:
                z = taps[name]
                dsz = z.shape[1] * z.shape[2]
                coeff = (self.lam_aml / n) * betas[active] * (2.0 / dsz)
                g = np.zeros_like(z)
                g[active] = coeff[:, None, None] * (
                    z[active] - masked_taps[name][active]
                )
                _add(name, g)
                if self.masked_branch_grad:
                    masked_grads[name] = -g
            if self.masked_branch_grad:
                extra_grad = np.zeros_like(model.params)
                for idx, mcache in state["segments"]:
                    seg = {name: g[idx] for name, g in masked_grads.items()}
                    extra_grad += forecaster.backward_batch(model, mcache, seg)

        Gy = (2.0 / (n * model.H * model.D)) * (state["Yhat"] - self.Y)
        if "predictor" in tap_grads:
            Gy = Gy + tap_grads.pop("predictor")
        tap_grads["predictor"] = Gy
        grad = forecaster.backward_batch(model, state["cache"], tap_grads)
        if extra_grad is not None:
            grad = grad + extra_grad
        if not np.isfinite(grad).all():
            raise NumericError("non-finite gradient in batch objective")
        return self._breakdown(state, esp_val), grad

    def freeze(self, model: ForecastModel) -> "FrozenObjective":
        """Capture selection, betas and masked targets at the current model
        so the objective becomes a smooth function of the parameters, the
        function whose gradient value_and_grad reports. Central finite
        differences of the frozen value are the independent check."""
        state = self._prepare(model)
        chosen_ks = None
        if state["active"].size:
            chosen_ks = state["cands"].ks[state["cands"].best_index[state["active"]]]
        return FrozenObjective(
            objective=self,
            betas=state["betas"].copy(),
            active=state["active"].copy(),
            sel=state["sel"],
            masked_taps=(
                None
                if state["masked_taps"] is None
                else {k: v.copy() for k, v in state["masked_taps"].items()}
            ),
            chosen_ks=chosen_ks,
        )


class FrozenObjective:
    """total_loss with selection, beta and (unless the masked branch is
    differentiated) the masked representations pinned to constants."""

    def __init__(self, objective, betas, active, sel, masked_taps, chosen_ks):
        self.obj = objective
        self.betas = betas
        self.active = active
        self.sel = sel
        self.masked_taps = masked_taps
        self.chosen_ks = chosen_ks

    def value(self, model: ForecastModel) -> float:
        X, Y = self.obj.X, self.obj.Y
        n = X.shape[0]
        Yhat, taps, _ = forecaster.forward_batch(model, X)
        pred = float(np.mean(backend.mse_rows(Yhat, Y)))
        aml_val = 0.0
        if self.obj.lam_aml > 0 and self.active.size:
            masked_taps = self.masked_taps
            if self.obj.masked_branch_grad:
                masked_taps = {
                    name: np.zeros((n,) + model.tap_shape(name)) for name in self.sel
                }
                for k in np.unique(self.chosen_ks):
                    idx = self.active[self.chosen_ks == k]
                    Xm = masking.apply_prefix_mask_batch(X[idx], int(k))
                    _, mtaps, _ = forecaster.forward_batch(model, Xm)
                    for name in self.sel:
                        masked_taps[name][idx] = mtaps[name]
            per_aml = np.zeros(n)
            for name in self.sel:
                diff = taps[name][self.active] - masked_taps[name][self.active]
                per_aml[self.active] += np.einsum("nij,nij->n", diff, diff) / (
                    diff.shape[1] * diff.shape[2]
                )
            aml_val = float(np.mean(self.betas * per_aml))
        esp_val = 0.0
        if self.obj.lam_esp > 0:
            Z = taps[model.embedding_tap]
            esp_val, _ = _esp_value(
                np.ascontiguousarray(Z.reshape(n, -1)),
                np.ascontiguousarray(Y.reshape(n, -1)),
                Z.shape[1] * Z.shape[2],
                Y.shape[1] * Y.shape[2],
            )
        return pred + self.obj.lam_aml * aml_val + self.obj.lam_esp * esp_val


def total_loss(
    X: np.ndarray,
    Y: np.ndarray,
    model: ForecastModel,
    candidates: masking.MaskCandidateSet | None,
    lam_aml: float,
    lam_esp: float,
    tap_selection="all",
) -> LossBreakdown:
    """Assemble the three terms for one batch. With both lambdas zero the
    masking and consistency paths never run and total equals pred."""
    obj = BatchObjective(
        X,
        Y,
        ks=None if candidates is None else candidates.ks,
        lam_aml=lam_aml,
        lam_esp=lam_esp,
        tap_selection=tap_selection,
        candidates=candidates,
    )
    return obj.value(model)
