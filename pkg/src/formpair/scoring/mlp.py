"""Spatial-feature relationship classifier.

A small numpy MLP: ``dense -> batchnorm -> relu -> dropout`` twice, then
``dense -> sigmoid``. Training uses Adam on mean binary cross-entropy with
hand-written backpropagation.

The hidden dense layers carry no bias since the batch-norm shift that follows
makes one redundant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from formpair.errors import InvalidInputError
from formpair.scoring.features import FEATURE_NAMES, N_FEATURES

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 512
    iterations: int = 6000
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")


@dataclass
class BatchNorm:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def fresh(cls, n: int) -> "BatchNorm":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))


@dataclass
class SpatialClassifier:
    """Weights and batch-norm state of the pair classifier.

    ``weights[i]`` has shape ``(fan_in, fan_out)``; ``norms`` holds one
    :class:`BatchNorm` per hidden layer; ``out_bias`` is the final layer bias.
    """

    weights: list[np.ndarray]
    norms: list[BatchNorm]
    out_bias: np.ndarray
    dropout: float = 0.5
    mode: str = "eval"
    metadata: dict = field(default_factory=dict)

    @classmethod
    def init(cls, hidden=(256, 256), dropout: float = 0.5, seed: int = 0, n_in: int = N_FEATURES):
        rng = np.random.default_rng(seed)
        sizes = [n_in, *hidden]
        weights = [rng.normal(0.0, np.sqrt(2.0 / fi), size=(fi, fo)) for fi, fo in zip(sizes[:-1], sizes[1:])]
        weights.append(rng.normal(0.0, np.sqrt(1.0 / sizes[-1]), size=(sizes[-1], 1)))
        return cls(weights, [BatchNorm.fresh(h) for h in hidden], np.zeros(1), dropout=dropout)

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name; the arrays are live views."""
        out = {}
        for i, (w, bn) in enumerate(zip(self.weights, self.norms)):
            out[f"W{i}"] = w
            out[f"gamma{i}"] = bn.scale
            out[f"beta{i}"] = bn.shift
        out[f"W{len(self.norms)}"] = self.weights[-1]
        out["b_out"] = self.out_bias
        return out

    def forward(self, x, mode: str | None = None, rng=None, use_dropout: bool = True, update_running: bool = True):
        """Return ``(probabilities, logits, cache)`` for a batch of feature rows."""
        mode = mode or self.mode
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.weights[0].shape[0]:
            raise InvalidInputError(f"expected a (n, {self.weights[0].shape[0]}) batch, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("non-finite feature value")
        if mode == "train" and len(x) < 2:
            raise InvalidInputError("train mode needs a batch of at least 2 rows")
        cache = []
        h = x
        for w, bn in zip(self.weights[:-1], self.norms):
            pre = h @ w
            if mode == "train":
                mu = pre.mean(axis=0)
                var = pre.var(axis=0)
                if update_running:
                    n = len(pre)
                    bn.running_mean[:] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
                    bn.running_var[:] = (1 - bn.momentum) * bn.running_var + bn.momentum * var * n / (n - 1)
            else:
                mu, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + bn.eps)
            xhat = (pre - mu) * inv_std
            act = np.maximum(bn.scale * xhat + bn.shift, 0.0)
            mask = None
            if mode == "train" and use_dropout and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = (rng.random(act.shape) < keep) / keep
                act = act * mask
            cache.append((h, xhat, inv_std, act, mask))
            h = act
        logits = (h @ self.weights[-1] + self.out_bias)[:, 0]
        cache.append(h)
        return _sigmoid(logits), logits, cache

    def loss_and_grads(self, x, y, rng=None, use_dropout: bool = True, update_running: bool = True):
        """Mean BCE on the batch and its gradients keyed like :meth:`params`."""
        y = np.asarray(y, dtype=float)
        _, logits, cache = self.forward(x, "train", rng, use_dropout, update_running)
        loss = bce_with_logits(logits, y)
        n = len(y)
        grads: dict[str, np.ndarray] = {}
        dz = ((_sigmoid(logits) - y) / n)[:, None]
        top = cache.pop()
        last = len(self.norms)
        grads[f"W{last}"] = top.T @ dz
        grads["b_out"] = dz.sum(axis=0)
        dh = dz @ self.weights[-1].T
        for i in reversed(range(last)):
            h_in, xhat, inv_std, act, mask = cache[i]
            bn = self.norms[i]
            if mask is not None:
                dh = dh * mask
            dy = dh * ((bn.scale * xhat + bn.shift) > 0)
            grads[f"gamma{i}"] = (dy * xhat).sum(axis=0)
            grads[f"beta{i}"] = dy.sum(axis=0)
            dxhat = dy * bn.scale
            m = len(dxhat)
            dpre = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            grads[f"W{i}"] = h_in.T @ dpre
            dh = dpre @ self.weights[i].T
        return loss, grads

    def predict(self, x) -> np.ndarray:
        """Eval-mode probabilities; deterministic and independent of batch composition."""
        return self.forward(x, "eval")[0]

    def to_dict(self) -> dict:
        layers = []
        for i, w in enumerate(self.weights):
            layer = {"weight": _array(w)}
            if i < len(self.norms):
                bn = self.norms[i]
                layer["batchnorm"] = {
                    "scale": bn.scale.tolist(),
                    "shift": bn.shift.tolist(),
                    "running_mean": bn.running_mean.tolist(),
                    "running_var": bn.running_var.tolist(),
                    "eps": bn.eps,
                    "momentum": bn.momentum,
                }
            else:
                layer["bias"] = self.out_bias.tolist()
            layers.append(layer)
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "model",
            "feature_order": list(FEATURE_NAMES),
            "dropout": self.dropout,
            "layers": layers,
            "training": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpatialClassifier":
        if list(d.get("feature_order", [])) != list(FEATURE_NAMES):
            raise InvalidInputError("model feature order does not match this version's feature vector")
        weights, norms, bias = [], [], None
        for i, layer in enumerate(d["layers"]):
            weights.append(_from_array(layer["weight"]))
            if "batchnorm" in layer:
                bn = layer["batchnorm"]
                norms.append(
                    BatchNorm(
                        np.array(bn["scale"], dtype=float),
                        np.array(bn["shift"], dtype=float),
                        np.array(bn["running_mean"], dtype=float),
                        np.array(bn["running_var"], dtype=float),
                        float(bn["eps"]),
                        float(bn["momentum"]),
                    )
                )
            else:
                bias = np.array(layer["bias"], dtype=float)
        if bias is None or len(norms) != len(weights) - 1:
            raise InvalidInputError("model layers are inconsistent")
        for a, b in zip(weights[:-1], weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise InvalidInputError("model weight shapes do not chain")
        if weights[0].shape[0] != N_FEATURES or weights[-1].shape[1] != 1:
            raise InvalidInputError("model input/output sizes are wrong")
        if any(np.any(bn.running_var <= 0) for bn in norms):
            raise InvalidInputError("batch-norm running variance must be positive")
        return cls(weights, norms, bias, dropout=float(d["dropout"]), mode="eval", metadata=dict(d.get("training", {})))


def _array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _from_array(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    # softplus(z) - y*z, written to avoid overflow
    return float(np.mean(np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))))


def mlp_forward(model: SpatialClassifier, batch, mode: str = "eval", rng=None) -> np.ndarray:
    return model.forward(batch, mode, rng if rng is not None else np.random.default_rng(0))[0]


def eval_loss(model: SpatialClassifier, x, y) -> float:
    return bce_with_logits(model.forward(x, "eval")[1], np.asarray(y, dtype=float))


def train_classifier(
    x,
    y,
    cfg: TrainConfig = TrainConfig(),
    hidden=(256, 256),
    dropout: float = 0.5,
) -> SpatialClassifier:
    """Fit a classifier with Adam; returns the model in eval mode.

    Batches are drawn without replacement from the seeded RNG, which also
    drives the dropout masks, so equal inputs give identical models.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise InvalidInputError("empty training set")
    if len(x) != len(y):
        raise InvalidInputError("features and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        warnings.warn("training set has a single class", RuntimeWarning, stacklevel=2)
    if cfg.iterations and len(x) < 2:
        raise InvalidInputError("need at least 2 training rows for batch statistics")

    model = SpatialClassifier.init(hidden, dropout, seed=cfg.rng_seed)
    rng = np.random.default_rng(cfg.rng_seed + 1)
    params = model.params()
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    batch = max(2, min(cfg.batch_size, len(x)))
    losses = []
    for step in range(1, cfg.iterations + 1):
        idx = rng.choice(len(x), size=batch, replace=False)
        loss, grads = model.loss_and_grads(x[idx], y[idx], rng)
        losses.append(loss)
        for k, p in params.items():
            g = grads[k]
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
            v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
            mhat = m[k] / (1 - cfg.beta1**step)
            vhat = v[k] / (1 - cfg.beta2**step)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
    model.mode = "eval"
    model.metadata = {
        "seed": cfg.rng_seed,
        "iterations": cfg.iterations,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "final_loss": float(np.mean(losses[-50:])) if losses else None,
    }
    return model


def gradient_check(model: SpatialClassifier, x, y, n_params: int = 200, step: float = 1e-5, seed: int = 0) -> float:
    """Largest relative error between backprop and central-difference gradients.

    Batch norm runs in train mode on the fixed batch with dropout off, and the
    running statistics are left untouched. A random subsample of at least
    ``n_params`` parameters (all of them if there are fewer) is checked.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _, grads = model.loss_and_grads(x, y, use_dropout=False, update_running=False)
    params = model.params()
    slots = [(k, i) for k, p in params.items() for i in range(p.size)]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(slots), size=min(n_params, len(slots)), replace=False)

    def loss_at() -> float:
        return model.loss_and_grads(x, y, use_dropout=False, update_running=False)[0]

    worst = 0.0
    for j in sorted(chosen):
        k, i = slots[j]
        flat = params[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up = loss_at()
        flat[i] = orig - step
        down = loss_at()
        flat[i] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[k].reshape(-1)[i]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
