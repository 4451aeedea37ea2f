"""Supervised training: cross-entropy, Adam, and the three hidden-layer regularizers.

Gradients are computed analytically for the two-layer model, including the
curvature path of the projected Jacobian penalty and the eigenvalue path of
the spectral penalty, so everything can be checked against finite
differences.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (activation, activation_deriv, activation_second_deriv,
                    forward, softmax)
from .numerics import covariance, seeded_rng, sym_eig_descending

REG_KINDS = ("none", "l2", "jacobian", "spectral")


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; reports the epoch where it happened."""


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    mode: str  # "decoder_only" | "end_to_end"
    epochs: int
    seed: int
    batch_size: int = 1000
    adam: AdamConfig = field(default_factory=AdamConfig)
    reg: str = "none"
    reg_coefficient: float = 0.0
    n_proj: int = 3
    spectral_target_alpha: float = 1.0
    spectral_cutoff: Optional[int] = None  # None -> min(batch-1, hidden, 256)

    def __post_init__(self):
        if self.mode not in ("decoder_only", "end_to_end"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.reg not in REG_KINDS:
            raise ValueError(f"unknown reg {self.reg!r}")
        if self.reg_coefficient < 0:
            raise ValueError("reg_coefficient must be >= 0")
        if self.n_proj < 1:
            raise ValueError("n_proj must be >= 1")
        if self.reg == "spectral" and self.batch_size < 2:
            raise ValueError("spectral regularization needs batch_size >= 2")


def cross_entropy(logits, label):
    """-log softmax(logits)[label], stabilized via log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[label])


def _mean_cross_entropy(Y, labels):
    m = Y.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(Y - m).sum(axis=1))
    return float(np.mean(lse - Y[np.arange(len(labels)), labels]))


def l2_penalty(W):
    """Squared Frobenius norm of the encoder weights (decoder unpenalized)."""
    W = np.asarray(W)
    return float(np.sum(W * W))


def _unit_vectors(rng, n_proj, dim):
    V = rng.standard_normal((n_proj, dim))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _jacobian_penalty_terms(model, X, V, want_grad):
    """Penalty value and (optionally) its exact dW for given projections V.

    Value: (hidden/n_proj) * mean over the batch of sum_v ||v^T J(x)||^2,
    an unbiased estimator of E||J||_F^2 for uniform unit v. The gradient
    carries both the direct W path and the curvature path through sigma'.
    """
    n = model.act_power
    B = X.shape[0]
    n_proj, hidden = V.shape
    H = X @ model.W.T
    S1 = activation_deriv(H, n)
    S2 = activation_second_deriv(H, n) if want_grad else None
    scale = hidden / (n_proj * B)
    value = 0.0
    dW = np.zeros_like(model.W) if want_grad else None
    for v in V:
        C = v[None, :] * S1                     # B x hidden
        U = C @ model.W                         # B x input, rows are v^T J(x_b)
        value += scale * float(np.sum(U * U))
        if want_grad:
            dW += 2.0 * scale * (C.T @ U)
            Sv = v[None, :] * S2 * (U @ model.W.T)
            dW += 2.0 * scale * (Sv.T @ X)
    return value, dW


def jacobian_penalty_projected(model, batch, n_proj, seed, projections="random"):
    """Random-projection estimate of the mean squared Jacobian Frobenius norm.

    ``projections="complete"`` replaces the random draws with the full
    standard basis (n_proj is ignored), recovering ||J||_F^2 exactly; useful
    for debugging the estimator.
    """
    X = np.asarray(batch, dtype=np.float64)
    if projections == "complete":
        V = np.eye(model.hidden_dim)
    else:
        V = _unit_vectors(seeded_rng(seed), n_proj, model.hidden_dim)
    value, _ = _jacobian_penalty_terms(model, X, V, want_grad=False)
    return value


def _resolve_cutoff(config, batch_size, hidden_dim):
    if config.spectral_cutoff is not None:
        cutoff = config.spectral_cutoff
    else:
        cutoff = min(batch_size - 1, hidden_dim, 256)
    if cutoff > min(batch_size - 1, hidden_dim):
        raise ValueError(f"spectral cutoff {cutoff} exceeds usable rank "
                         f"min({batch_size - 1}, {hidden_dim})")
    return cutoff


def _spectral_terms(hidden_batch, target_alpha, cutoff, want_grad):
    """Spectral penalty and (optionally) its gradient w.r.t. the activations.

    Penalty: sum_{n=2..cutoff} (lambda_n - lambda_1 * n^-alpha)^2 on the
    batch covariance spectrum. The gradient treats eigenvectors as locally
    constant, i.e. d lambda_n / dC = u_n u_n^T, which is exact for simple
    eigenvalues.
    """
    Z = np.asarray(hidden_batch, dtype=np.float64)
    B = Z.shape[0]
    spec = sym_eig_descending(covariance(Z))
    lam = spec.eigenvalues
    idx = np.arange(2, cutoff + 1)
    targets = lam[0] * idx.astype(np.float64) ** (-target_alpha)
    dev = lam[1:cutoff] - targets
    value = float(np.sum(dev * dev))
    if not want_grad:
        return value, None
    g = np.zeros(cutoff)
    g[0] = -2.0 * float(np.sum(dev * idx.astype(np.float64) ** (-target_alpha)))
    g[1:] = 2.0 * dev
    U = spec.eigenvectors[:, :cutoff]
    dC = (U * g[None, :]) @ U.T
    Zc = Z - Z.mean(axis=0)
    dZ = (2.0 / (B - 1)) * (Zc @ dC)
    return value, dZ


def spectral_penalty(hidden_batch, target_alpha, cutoff):
    """Deviation of the hidden-activation covariance spectrum from lambda_1 * n^-alpha."""
    Z = np.asarray(hidden_batch, dtype=np.float64)
    if Z.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if cutoff > min(Z.shape[0] - 1, Z.shape[1]):
        raise ValueError(f"cutoff {cutoff} exceeds usable rank")
    value, _ = _spectral_terms(Z, target_alpha, cutoff, want_grad=False)
    return value


def spectral_penalty_grad(hidden_batch, target_alpha, cutoff):
    """Analytic gradient of spectral_penalty w.r.t. the hidden activations."""
    _, dZ = _spectral_terms(hidden_batch, target_alpha, cutoff, want_grad=True)
    return dZ


def gradients(model, X, labels, config, proj_vectors=None):
    """Total loss and exact parameter gradients for one minibatch.

    The loss is mean cross-entropy plus reg_coefficient times the configured
    penalty. Gradients cover A and b always, W only in end_to_end mode.
    ``proj_vectors`` supplies the Jacobian-penalty projections (rows unit
    norm); required when reg="jacobian" with a nonzero coefficient.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    B = X.shape[0]
    n = model.act_power
    train_encoder = config.mode == "end_to_end"

    H = X @ model.W.T
    Hhat = activation(H, n)
    Y = Hhat @ model.A.T + model.b
    loss = _mean_cross_entropy(Y, labels)

    P = softmax(Y)
    dY = P.copy()
    dY[np.arange(B), labels] -= 1.0
    dY /= B
    dA = dY.T @ Hhat
    db = dY.sum(axis=0)
    dW = None
    if train_encoder:
        dHhat = dY @ model.A
        dW = (dHhat * activation_deriv(H, n)).T @ X

    coeff = config.reg_coefficient
    if config.reg != "none" and coeff > 0.0:
        if config.reg == "l2":
            penalty = l2_penalty(model.W)
            if train_encoder:
                dW += coeff * 2.0 * model.W
        elif config.reg == "jacobian":
            if proj_vectors is None:
                raise ValueError("jacobian regularization needs projection vectors")
            penalty, dW_pen = _jacobian_penalty_terms(model, X, proj_vectors,
                                                      want_grad=train_encoder)
            if train_encoder:
                dW += coeff * dW_pen
        else:  # spectral
            cutoff = _resolve_cutoff(config, B, model.hidden_dim)
            penalty, dZ = _spectral_terms(Hhat, config.spectral_target_alpha,
                                          cutoff, want_grad=train_encoder)
            if train_encoder:
                dW += coeff * (dZ * activation_deriv(H, n)).T @ X
        loss += coeff * penalty

    grads = {"A": dA, "b": db}
    if train_encoder:
        grads["W"] = dW
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, adam):
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, p in params.items():
        g = grads[key]
        m = adam.beta1 * state.m[key] + (1 - adam.beta1) * g
        v = adam.beta2 * state.v[key] + (1 - adam.beta2) * (g * g)
        m_hat = m / (1 - adam.beta1 ** t)
        v_hat = v / (1 - adam.beta2 ** t)
        new_params[key] = p - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
        new_m[key], new_v[key] = m, v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def train_supervised(model, data, config, eval_data=None):
    """Shuffled minibatch epochs of Adam on cross-entropy plus regularizer.

    Returns the trained model and a history dict with per-epoch train loss
    and, when ``eval_data`` is given, test accuracy. Partial trailing batches
    are dropped so every step sees a full batch. Deterministic per seed; in
    decoder_only mode W is returned bit-identical.
    """
    from .model import EncoderDecoderModel, accuracy

    rng = seeded_rng(config.seed)
    W = model.W if config.mode == "decoder_only" else model.W.copy()
    work = EncoderDecoderModel(W=W, A=model.A.copy(), b=model.b.copy(),
                               act_power=model.act_power,
                               frozen_encoder=config.mode == "decoder_only")
    params = {"A": work.A, "b": work.b}
    if config.mode == "end_to_end":
        params["W"] = work.W
    state = AdamState.zeros_like(params)

    use_proj = config.reg == "jacobian" and config.reg_coefficient > 0.0
    count = data.inputs.shape[0]
    n_batches = count // config.batch_size
    if n_batches == 0:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {count}")

    history = {"train_loss": [], "test_accuracy": []}
    for epoch in range(config.epochs):
        perm = rng.permutation(count)
        epoch_loss = 0.0
        for i in range(n_batches):
            sel = perm[i * config.batch_size:(i + 1) * config.batch_size]
            V = _unit_vectors(rng, config.n_proj, work.hidden_dim) if use_proj else None
            loss, grads = gradients(work, data.inputs[sel], data.labels[sel],
                                    config, proj_vectors=V)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
            params, state = adam_step(params, grads, state, config.adam)
            work.A, work.b = params["A"], params["b"]
            if config.mode == "end_to_end":
                work.W = params["W"]
            epoch_loss += loss
        history["train_loss"].append(epoch_loss / n_batches)
        if eval_data is not None:
            history["test_accuracy"].append(accuracy(work, eval_data))
    return work, history
