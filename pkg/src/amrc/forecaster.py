"""Small differentiable forecasters with named representation taps.

Two kinds are provided, both channel-independent (one weight set shared by
all D channels, applied per channel):

* ``linear``: yhat_c = W x_c + b. Its prediction is the only nontrivial
  representation, so it doubles as the embedding tap.
* ``tinymlp``: two tanh layers and an affine head, exposing taps
  "embedding" (first hidden state, E x D across channels), "backbone"
  (second hidden state) and "predictor" (the prediction itself).

Parameters live in one flat float64 vector so objectives can be checked
against central finite differences coordinate by coordinate. Everything is
64-bit and forward passes are pure functions of (params, input).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .errors import NumericError, ValidationError

KINDS = ("linear", "tinymlp")


@dataclass
class TapBundle:
    """Ordered named representation tensors; "predictor" is always present
    and equals the returned prediction."""

    taps: dict[str, np.ndarray]

    def __post_init__(self):
        if "predictor" not in self.taps:
            raise ValidationError("TapBundle must contain a 'predictor' tap")
        for name, t in self.taps.items():
            if t.ndim != 2:
                raise ValidationError(f"tap {name!r} must be a matrix, got {t.shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.taps:
            raise ValidationError(f"missing tap {name!r}; have {list(self.taps)}")
        return self.taps[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.taps)


@dataclass
class ForecastModel:
    """Forecaster with flat parameter storage.

    E is the hidden width of the tinymlp and 0 for the linear kind. seed
    records the init seed for provenance; it plays no role after init.
    """

    kind: str
    L: int
    H: int
    D: int
    E: int
    seed: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if min(self.L, self.H, self.D) < 1 or (self.kind == "tinymlp" and self.E < 1):
            raise ValidationError(
                f"dims must be >= 1, got L={self.L} H={self.H} D={self.D} E={self.E}"
            )
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = param_count(self.kind, self.L, self.H, self.E)
        if self.params.shape != (expected,):
            raise ValidationError(
                f"{self.kind} with L={self.L} H={self.H} E={self.E} needs "
                f"{expected} params, got {self.params.shape}"
            )

    @property
    def tap_names(self) -> tuple[str, ...]:
        if self.kind == "linear":
            return ("predictor",)
        return ("embedding", "backbone", "predictor")

    @property
    def embedding_tap(self) -> str:
        """Tap fed to the batch-consistency penalty."""
        return "predictor" if self.kind == "linear" else "embedding"

    def tap_shape(self, name: str) -> tuple[int, int]:
        shapes = {"predictor": (self.H, self.D)}
        if self.kind == "tinymlp":
            shapes["embedding"] = (self.E, self.D)
            shapes["backbone"] = (self.E, self.D)
        if name not in shapes:
            raise ValidationError(f"model kind {self.kind!r} has no tap {name!r}")
        return shapes[name]

    def resolve_tap(self, name: str) -> str:
        """Map a requested tap name onto one this model exposes.

        The linear model serves "embedding" requests with its predictor
        tensor (its only representation)."""
        if self.kind == "linear" and name == "embedding":
            return "predictor"
        if name not in self.tap_names:
            raise ValidationError(f"model kind {self.kind!r} has no tap {name!r}")
        return name


def param_count(kind: str, L: int, H: int, E: int = 0) -> int:
    if kind == "linear":
        return H * L + H
    if kind == "tinymlp":
        return E * L + E + E * E + E + H * E + H
    raise ValidationError(f"unknown model kind {kind!r}")


def new_linear(L: int, H: int, D: int, seed: int) -> ForecastModel:
    """Affine forecaster, init uniform in [-a, a] with a = 1/sqrt(L)."""
    if min(L, H, D) < 1:
        raise ValidationError(f"dims must be >= 1, got L={L} H={H} D={D}")
    rng = np.random.default_rng(seed)
    a = 1.0 / np.sqrt(L)
    W = rng.uniform(-a, a, size=(H, L))
    b = rng.uniform(-a, a, size=H)
    params = np.concatenate([W.ravel(), b])
    return ForecastModel("linear", L, H, D, 0, seed, params)


def new_tinymlp(L: int, H: int, D: int, E: int, seed: int) -> ForecastModel:
    """Two-hidden-layer tanh forecaster, per-layer uniform init in
    [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if min(L, H, D, E) < 1:
        raise ValidationError(f"dims must be >= 1, got L={L} H={H} D={D} E={E}")
    rng = np.random.default_rng(seed)
    chunks = []
    for shape, fan_in in [
        ((E, L), L),
        ((E,), L),
        ((E, E), E),
        ((E,), E),
        ((H, E), E),
        ((H,), E),
    ]:
        a = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-a, a, size=shape).ravel())
    return ForecastModel("tinymlp", L, H, D, E, seed, np.concatenate(chunks))


def _linear_views(model: ForecastModel):
    L, H = model.L, model.H
    W = model.params[: H * L].reshape(H, L)
    b = model.params[H * L :]
    return W, b


def _mlp_views(model: ForecastModel):
    L, H, E = model.L, model.H, model.E
    p = model.params
    o = 0
    W1 = p[o : o + E * L].reshape(E, L); o += E * L
    b1 = p[o : o + E]; o += E
    W2 = p[o : o + E * E].reshape(E, E); o += E * E
    b2 = p[o : o + E]; o += E
    W3 = p[o : o + H * E].reshape(H, E); o += H * E
    b3 = p[o : o + H]
    return W1, b1, W2, b2, W3, b3


def get_params(model: ForecastModel) -> np.ndarray:
    return model.params.copy()


def set_params(model: ForecastModel, vector: np.ndarray) -> None:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != model.params.shape:
        raise ValidationError(
            f"expected {model.params.shape[0]} params, got {vector.shape}"
        )
    model.params[:] = vector


def forward_batch(model: ForecastModel, X: np.ndarray):
    """Batched forward pass.

    Returns (Yhat, taps, cache) with Yhat (n, H, D), taps mapping each tap
    name to an (n, d1, d2) array (the "predictor" entry is Yhat itself) and
    cache holding the activations backward_batch needs.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] != model.L or X.shape[2] != model.D:
        raise ValidationError(
            f"expected input (n, {model.L}, {model.D}), got {X.shape}"
        )
    if model.kind == "linear":
        W, b = _linear_views(model)
        Yhat = backend.linear_forward(W, b, X)
        return Yhat, {"predictor": Yhat}, (X,)
    W1, b1, W2, b2, W3, b3 = _mlp_views(model)
    H1, H2, Yhat = backend.mlp_forward(W1, b1, W2, b2, W3, b3, X)
    return Yhat, {"embedding": H1, "backbone": H2, "predictor": Yhat}, (X, H1, H2)


def forward(model: ForecastModel, x: np.ndarray) -> tuple[np.ndarray, TapBundle]:
    """Single-sample forward: x (L, D) -> (yhat (H, D), taps)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.L, model.D):
        raise ValidationError(f"expected input ({model.L}, {model.D}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite input to forward")
    Yhat, taps, _ = forward_batch(model, x[None])
    return Yhat[0], TapBundle({name: t[0] for name, t in taps.items()})


def backward_batch(model: ForecastModel, cache, tap_grads: dict) -> np.ndarray:
    """Flat parameter gradient given upstream gradients on taps.

    tap_grads maps tap names to (n, d1, d2) arrays; missing taps get zero
    upstream gradient. For the linear kind all taps coincide with the
    prediction, so their gradients are summed onto it.
    """
    if model.kind == "linear":
        (X,) = cache
        n = X.shape[0]
        Gy = np.zeros((n, model.H, model.D))
        for g in tap_grads.values():
            Gy = Gy + g
        dW, db = backend.linear_backward(X, np.ascontiguousarray(Gy))
        return np.concatenate([dW.ravel(), db])
    X, H1, H2 = cache
    n = X.shape[0]
    zeros_e = np.zeros((n, model.E, model.D))
    G1 = np.ascontiguousarray(tap_grads.get("embedding", zeros_e))
    G2 = np.ascontiguousarray(tap_grads.get("backbone", zeros_e))
    Gy = np.ascontiguousarray(
        tap_grads.get("predictor", np.zeros((n, model.H, model.D)))
    )
    W1, b1, W2, b2, W3, b3 = _mlp_views(model)
    dW1, db1, dW2, db2, dW3, db3 = backend.mlp_backward(
        W1, W2, W3, X, H1, H2, G1, G2, Gy
    )
    return np.concatenate(
        [dW1.ravel(), db1, dW2.ravel(), db2, dW3.ravel(), db3]
    )


def masked_losses(model: ForecastModel, X, Y, ks) -> np.ndarray:
    """Per-sample prediction MSE under each prefix-mask length in ks: (n, S).

    k = 0 rows give the unmasked loss. This is the single evaluation path
    shared by candidate sampling and exhaustive mask scans, so losses for
    equal k are identical wherever they are compared.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    ks = np.ascontiguousarray(ks, dtype=np.int64)
    if ks.size and (ks.min() < 0 or ks.max() > model.L):
        raise ValidationError(f"mask lengths must lie in [0, {model.L}]")
    if model.kind == "linear":
        W, b = _linear_views(model)
        return backend.masked_losses_linear(W, b, X, Y, ks)
    W1, b1, W2, b2, W3, b3 = _mlp_views(model)
    return backend.masked_losses_mlp(W1, b1, W2, b2, W3, b3, X, Y, ks)


def loss_gradient(model: ForecastModel, objective) -> np.ndarray:
    """Analytic gradient of a scalar objective w.r.t. the flat params.

    The objective is any object exposing value_and_grad(model); the batch
    objective in the objectives module is the real one, and tests may pass
    simple hooks (e.g. half squared parameter norm).
    """
    _, grad = objective.value_and_grad(model)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape:
        raise NumericError(
            f"objective returned gradient of shape {grad.shape}, expected "
            f"{model.params.shape}"
        )
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient")
    return grad


def to_checkpoint(model: ForecastModel) -> dict:
    return {
        "kind": model.kind,
        "dims": {"L": model.L, "H": model.H, "D": model.D, "E": model.E},
        "seed": model.seed,
        "params": model.params.tolist(),
    }


def from_checkpoint(doc: dict) -> ForecastModel:
    try:
        kind = doc["kind"]
        dims = doc["dims"]
        model = ForecastModel(
            kind=kind,
            L=int(dims["L"]),
            H=int(dims["H"]),
            D=int(dims["D"]),
            E=int(dims.get("E", 0)),
            seed=int(doc["seed"]),
            params=np.array(doc["params"], dtype=np.float64),
        )
    except KeyError as exc:
        raise ValidationError(f"checkpoint missing field {exc}") from None
    return model


def save_checkpoint(model: ForecastModel, path: str | Path, meta: dict | None = None):
    doc = to_checkpoint(model)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> ForecastModel:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such checkpoint: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt checkpoint {path}: {exc}") from None
    return from_checkpoint(doc)
