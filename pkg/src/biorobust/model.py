"""Two-layer encoder-decoder model: forward pass, exact hidden Jacobian, prediction.

The forward pass is

    h = W x            (encoder currents)
    hhat = ReLU(h)^n   (hidden features, n >= 1)
    y = A hhat + b     (logits)

All functions accept a single input vector or a batch (rows = samples).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class EncoderDecoderModel:
    W: np.ndarray  # hidden x input
    A: np.ndarray  # classes x hidden
    b: np.ndarray  # classes
    act_power: float = 1.0
    frozen_encoder: bool = False

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def hidden_dim(self):
        return self.W.shape[0]

    @property
    def num_classes(self):
        return self.A.shape[0]


def lebesgue_weights(S, p):
    """Map synapses to effective weights: W_ij = S_ij * |S_ij|^(p-2).

    With p = 2 the mapping is the identity.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    S = np.asarray(S, dtype=np.float64)
    if p == 2:
        return S.copy()
    return S * np.abs(S) ** (p - 2)


def init_model(input_dim, hidden_dim, num_classes, act_power, seed, encoder=None,
               frozen_encoder=False):
    """Fresh model with seeded normal weights scaled to keep currents O(1).

    Pass ``encoder`` to install a precomputed W (e.g. from unsupervised
    training); it is copied, never aliased.
    """
    from .numerics import seeded_rng

    rng = seeded_rng(seed)
    if encoder is None:
        W = rng.standard_normal((hidden_dim, input_dim)) / np.sqrt(input_dim)
    else:
        W = np.array(encoder, dtype=np.float64)
        if W.shape != (hidden_dim, input_dim):
            raise ValueError(f"encoder shape {W.shape} != ({hidden_dim}, {input_dim})")
    A = rng.standard_normal((num_classes, hidden_dim)) / np.sqrt(hidden_dim)
    b = np.zeros(num_classes)
    return EncoderDecoderModel(W=W, A=A, b=b, act_power=float(act_power),
                               frozen_encoder=frozen_encoder)


def activation(h, n):
    """ReLU(h)^n."""
    return np.maximum(h, 0.0) ** n


def activation_deriv(h, n):
    """d/dh ReLU(h)^n = n * max(h,0)^(n-1) for h > 0, and 0 at h <= 0.

    The kink value sigma'(0) = 0 is a deliberate subgradient choice; it keeps
    the Jacobian conservative and is the continuous limit for n > 1.
    """
    pos = h > 0
    out = np.zeros_like(h, dtype=np.float64)
    if n == 1.0:
        out[pos] = 1.0
    else:
        out[pos] = n * h[pos] ** (n - 1.0)
    return out


def activation_second_deriv(h, n):
    """d^2/dh^2 ReLU(h)^n; identically 0 for n = 1 and at h <= 0."""
    out = np.zeros_like(h, dtype=np.float64)
    if n == 1.0:
        return out
    pos = h > 0
    out[pos] = n * (n - 1.0) * h[pos] ** (n - 2.0)
    return out


def forward(model, x):
    """Forward pass; returns (h, hhat, y). Works on a vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    h = x @ model.W.T
    hhat = activation(h, model.act_power)
    y = hhat @ model.A.T + model.b
    return h, hhat, y


def hidden_jacobian_exact(model, x):
    """Exact Jacobian J of hhat w.r.t. x at a single input, and its Frobenius norm.

    J_ij = sigma'((Wx)_i) * W_ij, so the norm comes cheaply from the identity
    ||J||_F^2 = sum_i sigma'((Wx)_i)^2 * ||W_i||^2.
    """
    x = np.asarray(x, dtype=np.float64)
    h = model.W @ x
    s = activation_deriv(h, model.act_power)
    J = s[:, None] * model.W
    row_sq = np.einsum("ij,ij->i", model.W, model.W)
    fro = float(np.sqrt((s * s) @ row_sq))
    return J, fro


def jacobian_frobenius_batch(model, X):
    """||J(x)||_F for every row of X via the closed-form identity."""
    X = np.asarray(X, dtype=np.float64)
    H = X @ model.W.T
    S = activation_deriv(H, model.act_power)
    row_sq = np.einsum("ij,ij->i", model.W, model.W)
    return np.sqrt((S * S) @ row_sq)


def softmax(y):
    """Shift-stabilized softmax along the last axis."""
    z = y - np.max(y, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model, x):
    """Argmax class (lowest index on ties) and max-softmax confidence.

    Returns scalars for a single input, arrays for a batch.
    """
    _, _, y = forward(model, x)
    p = softmax(y)
    if y.ndim == 1:
        cls = int(np.argmax(y))
        return cls, float(p[cls])
    classes = np.argmax(y, axis=1)
    return classes, p[np.arange(len(classes)), classes]


def accuracy(model, data):
    """Fraction of a labeled dataset classified correctly."""
    classes, _ = predict(model, data.inputs)
    return float(np.mean(classes == data.labels))
