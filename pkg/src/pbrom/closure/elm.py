"""Extreme learning machine closure ``f(R) = W2^T tanh(W1 R + B1)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ResidualDataset

SV_CUTOFF = 1e-12


@dataclass(frozen=True)
class ElmModel:
    """Trained ELM.

    ``W1 (h, n_in)`` and ``B1 (h,)`` are the fixed random hidden layer,
    ``W2 (h, n_out)`` the least-squares output weights.  ``input_scale``
    divides the inputs before the hidden layer (all ones disables it).
    """

    W1: np.ndarray
    B1: np.ndarray
    W2: np.ndarray
    input_scale: np.ndarray
    seed: int
    regularization: float = 0.0
    report: dict = field(default_factory=dict, compare=False)

    kind = "elm"

    def __post_init__(self):
        for name in ("W1", "B1", "W2", "input_scale"):
            getattr(self, name).setflags(write=False)

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    def hidden(self, inputs: np.ndarray) -> np.ndarray:
        """Hidden activations for inputs ``(n_in, M)`` -> ``(h, M)``."""
        x = inputs / self.input_scale[:, None]
        return np.tanh(self.W1 @ x + self.B1[:, None])

    def predict(self, r: np.ndarray) -> np.ndarray:
        return elm_predict(self, r)


def _hidden_layer(rng: np.random.Generator, hidden_size: int, n_in: int):
    W1 = rng.uniform(-1.0, 1.0, size=(hidden_size, n_in))
    B1 = rng.uniform(-1.0, 1.0, size=hidden_size)
    return W1, B1


def least_squares_weights(H: np.ndarray, T: np.ndarray, regularization: float = 0.0,
                          cutoff: float = SV_CUTOFF) -> tuple[np.ndarray, int]:
    """``pinv(H) @ T`` via the SVD, with optional ridge damping.

    Returns the weights and the number of singular values cut off.
    """
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((H.shape[1], T.shape[1])), int(s.size)
    keep = s > cutoff * s[0]
    inv = np.zeros_like(s)
    inv[keep] = s[keep] / (s[keep] ** 2 + regularization)
    return (Vt.T * inv) @ (U.T @ T), int(np.sum(~keep))


def elm_train(dataset: ResidualDataset, hidden_size: int = 10, seed: int = 0,
              regularization: float = 0.0, scale_inputs: bool = True) -> ElmModel:
    """Fit the output weights of a random single-hidden-layer network."""
    if dataset.n_samples == 0:
        raise ValueError("empty dataset")
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    X, T = dataset.inputs, dataset.targets
    rng = np.random.default_rng(seed)
    W1, B1 = _hidden_layer(rng, hidden_size, X.shape[0])
    if scale_inputs:
        scale = np.max(np.abs(X), axis=1)
        scale[scale == 0] = 1.0
    else:
        scale = np.ones(X.shape[0])
    model = ElmModel(W1, B1, np.zeros((hidden_size, T.shape[0])), scale, seed, regularization)
    H = model.hidden(X).T  # (M, h)
    W2, n_cut = least_squares_weights(H, T.T, regularization)
    model = ElmModel(W1, B1, W2, scale, seed, regularization)
    fit = elm_predict(model, X)
    rmse = float(np.sqrt(np.mean((fit - T) ** 2)))
    zero = float(np.sqrt(np.mean(T ** 2)))
    report = {"train_rmse": rmse, "zero_rmse": zero, "n_cut": n_cut, "n_samples": dataset.n_samples}
    return ElmModel(W1, B1, W2, scale, seed, regularization, report)


def elm_predict(model: ElmModel, r: np.ndarray) -> np.ndarray:
    """Closure output for one input vector ``(n_in,)`` or a batch ``(n_in, M)``."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != model.n_features:
        raise ValueError(f"expected {model.n_features} inputs, got {r.shape[0]}")
    if r.ndim == 1:
        h = np.tanh(model.W1 @ (r / model.input_scale) + model.B1)
        return model.W2.T @ h
    # column by column so batch and single evaluations agree bit for bit
    return np.column_stack([elm_predict(model, col) for col in r.T])
