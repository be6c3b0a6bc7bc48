"""NARX closure with input and feedback delay one, trained by Levenberg-Marquardt.

The network maps ``[R(t_j), R(t_j-1), R~(t_j-1)]`` to ``R~(t_j)`` through one
tan-sigmoid hidden layer and a linear output layer.  Inputs and targets are
min-max normalised to ``[-1, 1]`` per feature.  Training is open loop
(teacher forcing); prediction is closed loop, the caller feeding back its own
previous output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ResidualDataset

CLAMP = 1.5


class NarxTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MinMax:
    """Per-feature map ``x -> 2 (x - lo) / (hi - lo) - 1``; zero-width features map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMax":
        return cls(np.min(x, axis=-1), np.max(x, axis=-1))

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def degenerate(self) -> np.ndarray:
        return self.width <= 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        w = np.where(self.degenerate, 1.0, self.width)
        lo, w = _col(self.lo, x), _col(w, x)
        y = 2.0 * (x - lo) / w - 1.0
        return np.where(_col(self.degenerate, x), 0.0, y)

    def invert(self, y: np.ndarray) -> np.ndarray:
        lo, w = _col(self.lo, y), _col(self.width, y)
        return lo + (y + 1.0) * 0.5 * w


def _col(v, like):
    return v if like.ndim == 1 else v[:, None]


@dataclass(frozen=True)
class NarxConfig:
    hidden_size: int = 10
    ratios: tuple[float, float, float] = (0.8, 0.15, 0.05)
    epochs: int = 1000
    mu: float = 1e-3
    mu_dec: float = 0.1
    mu_inc: float = 10.0
    mu_max: float = 1e10
    min_grad: float = 1e-15
    max_fail: int = 6
    seed: int = 0
    # weight decay on all parameters; removes directions the teacher-forced
    # data cannot see, which otherwise become closed-loop feedback gain
    weight_decay: float = 1e-6


@dataclass(frozen=True)
class NarxModel:
    """Trained NARX network with its normalisation maps and training report."""

    W1: np.ndarray  # (h, 3 n)
    b1: np.ndarray
    W2: np.ndarray  # (n, h)
    b2: np.ndarray
    x_norm: MinMax
    y_norm: MinMax
    sample_dt: float
    seed: int
    report: dict = field(default_factory=dict, compare=False)

    kind = "narx"
    input_delay = 1
    feedback_delay = 1

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def n_features(self) -> int:
        return self.W2.shape[0]

    def forward_normalised(self, z: np.ndarray) -> np.ndarray:
        return self.W2 @ np.tanh(self.W1 @ z + self.b1) + self.b2

    def predict(self, r_now, r_prev, rt_prev) -> np.ndarray:
        return narx_predict(self, r_now, r_prev, rt_prev)


def block_split(n: int, ratios=(0.8, 0.15, 0.05)) -> tuple[slice, slice, slice]:
    """Contiguous train/validation/test blocks (validation and test sizes rounded)."""
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    return slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, n)


def _unpack(theta, n_in, h, n_out):
    k = 0
    W1 = theta[k:k + h * n_in].reshape(h, n_in); k += h * n_in
    b1 = theta[k:k + h]; k += h
    W2 = theta[k:k + n_out * h].reshape(n_out, h); k += n_out * h
    b2 = theta[k:k + n_out]
    return W1, b1, W2, b2


def _forward(theta, Z, n_out, h):
    W1, b1, W2, b2 = _unpack(theta, Z.shape[0], h, n_out)
    A = np.tanh(W1 @ Z + b1[:, None])
    return W2 @ A + b2[:, None], A


def _jacobian(theta, Z, n_out, h):
    """Jacobian of the outputs (flattened sample-major) with respect to the parameters."""
    n_in, m = Z.shape
    W1, b1, W2, b2 = _unpack(theta, n_in, h, n_out)
    A = np.tanh(W1 @ Z + b1[:, None])  # (h, m)
    dA = 1.0 - A ** 2
    # d out[k, s] / d W1[h, i] = W2[k, h] dA[h, s] Z[i, s]
    g = W2[None, :, :] * dA.T[:, None, :]  # (m, k, h)
    jW1 = g[:, :, :, None] * Z.T[:, None, None, :]  # (m, k, h, i)
    jb1 = g
    jW2 = np.zeros((m, n_out, n_out, h))
    idx = np.arange(n_out)
    jW2[:, idx, idx, :] = A.T[:, None, :]
    jb2 = np.broadcast_to(np.eye(n_out), (m, n_out, n_out))
    J = np.concatenate([jW1.reshape(m, n_out, -1), jb1, jW2.reshape(m, n_out, -1), jb2], axis=2)
    return J.reshape(m * n_out, -1)


def _init(rng, n_in, h, n_out):
    # Nguyen-Widrow style hidden layer, small uniform output layer
    beta = 0.7 * h ** (1.0 / max(n_in, 1))
    W1 = rng.uniform(-1.0, 1.0, size=(h, n_in))
    W1 *= beta / np.maximum(np.linalg.norm(W1, axis=1, keepdims=True), 1e-12)
    b1 = rng.uniform(-beta, beta, size=h)
    W2 = rng.uniform(-0.5, 0.5, size=(n_out, h))
    b2 = rng.uniform(-0.5, 0.5, size=n_out)
    return np.concatenate([W1.ravel(), b1, W2.ravel(), b2])


def _delay_inputs(xn: np.ndarray, yn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced regressors ``[x_j, x_{j-1}, y_{j-1}]`` and targets ``y_j`` for ``j >= 1``."""
    Z = np.vstack([xn[:, 1:], xn[:, :-1], yn[:, :-1]])
    return Z, yn[:, 1:]


def narx_train(dataset: ResidualDataset, config: NarxConfig = NarxConfig()) -> NarxModel:
    """Levenberg-Marquardt fit on the training block with validation early stopping."""
    X, Y = dataset.inputs, dataset.targets
    if dataset.n_samples < 10:
        raise NarxTrainingError("NARX training needs at least 10 samples")
    x_norm, y_norm = MinMax.fit(X), MinMax.fit(Y)
    xn, yn = x_norm.apply(X), y_norm.apply(Y)
    Z, T = _delay_inputs(xn, yn)
    n_out, h = Y.shape[0], config.hidden_size
    tr, va, te = block_split(Z.shape[1], config.ratios)
    rng = np.random.default_rng(config.seed)
    theta = _init(rng, Z.shape[0], h, n_out)

    def perf(th, sl):
        out, _ = _forward(th, Z[:, sl], n_out, h)
        e = out - T[:, sl]
        return float(np.mean(e ** 2)) if e.size else 0.0

    Ztr, Ttr = Z[:, tr], T[:, tr]
    lam = config.weight_decay
    if lam < 0:
        raise ValueError("weight_decay must be non-negative")
    mu = config.mu
    best = theta.copy()
    best_val = perf(theta, va) if va.stop > va.start else np.inf
    fails = 0
    trace = []
    stop = "epochs"
    grad_norm = np.nan
    for epoch in range(config.epochs):
        out, _ = _forward(theta, Ztr, n_out, h)
        e = (out - Ttr).T.ravel()
        J = _jacobian(theta, Ztr, n_out, h)
        g = J.T @ e + lam * theta
        grad_norm = float(np.linalg.norm(g))
        sse = float(e @ e) + lam * float(theta @ theta)
        trace.append((epoch, sse, mu, grad_norm))
        if not np.isfinite(sse):
            raise NarxTrainingError(f"non-finite training error at epoch {epoch}; trace tail {trace[-5:]}")
        if grad_norm < config.min_grad or sse == 0.0:
            stop = "min_grad"
            break
        eye = np.eye(theta.size)
        JtJ = J.T @ J + lam * eye
        while True:
            step = np.linalg.solve(JtJ + mu * eye, -g)
            trial = theta + step
            out_t, _ = _forward(trial, Ztr, n_out, h)
            et = out_t - Ttr
            if np.isfinite(et).all() and float(np.sum(et ** 2)) + lam * float(trial @ trial) < sse:
                theta = trial
                mu *= config.mu_dec
                break
            mu *= config.mu_inc
            if mu > config.mu_max:
                break
        if mu > config.mu_max:
            stop = "mu_max"
            if epoch == 0:
                raise NarxTrainingError(
                    f"Levenberg-Marquardt damping exceeded {config.mu_max:g} without progress; trace {trace}")
            break
        if va.stop > va.start:
            v = perf(theta, va)
            if v < best_val:
                best_val, best, fails = v, theta.copy(), 0
            else:
                fails += 1
                if fails >= config.max_fail:
                    stop = "validation"
                    break
        else:
            best = theta.copy()
    if va.stop > va.start and stop != "validation":
        # keep whichever of the final and best-validation weights validates better
        if perf(theta, va) <= best_val:
            best = theta
    W1, b1, W2, b2 = _unpack(best, Z.shape[0], h, n_out)
    model = NarxModel(W1.copy(), b1.copy(), W2.copy(), b2.copy(), x_norm, y_norm,
                      dataset.dt, config.seed)
    # errors of the open-loop replay, so predict() reproduces them exactly
    pred = np.column_stack([
        narx_predict(model, X[:, j], X[:, j - 1], Y[:, j - 1]) for j in range(1, X.shape[1])
    ])
    err = pred - Y[:, 1:]

    def rmse(sl):
        return float(np.sqrt(np.mean(err[:, sl] ** 2))) if sl.stop > sl.start else float("nan")

    report = {
        "train_rmse": rmse(tr), "val_rmse": rmse(va), "test_rmse": rmse(te),
        "zero_rmse": float(np.sqrt(np.mean(Y[:, 1:][:, tr] ** 2))),
        "epochs": len(trace), "stop": stop, "final_grad_norm": grad_norm,
        "split": [tr.stop - tr.start, va.stop - va.start, te.stop - te.start],
    }
    return NarxModel(model.W1, model.b1, model.W2, model.b2, x_norm, y_norm,
                     dataset.dt, config.seed, report)


def narx_predict(model: NarxModel, r_now, r_prev, rt_prev) -> np.ndarray:
    """One closed-loop step; pass ``rt_prev = 0`` on the first call."""
    r_now, r_prev, rt_prev = (np.asarray(v, dtype=float) for v in (r_now, r_prev, rt_prev))
    n = model.n_features
    if r_now.shape != (n,) or r_prev.shape != (n,) or rt_prev.shape != (n,):
        raise ValueError(f"NARX inputs must all have length {n}")
    z = np.concatenate([model.x_norm.apply(r_now), model.x_norm.apply(r_prev), model.y_norm.apply(rt_prev)])
    y = np.clip(model.forward_normalised(z), -CLAMP, CLAMP)
    y = np.where(model.y_norm.degenerate, 0.0, y)
    return model.y_norm.invert(y)
