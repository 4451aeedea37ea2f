"""Winner-take-all local learning of synapses, plus the convergence gate.

The update for one minibatch B is

    dS_ij = eta * E_{x in B}[ g(h_i(x)) * (x_j - h_i(x) * S_ij) ]

where h = W x with W_ij = S_ij|S_ij|^(p-2), the most active unit gets
g = 1 and the k-th most active gets g = -delta (all others 0).
"""

from dataclasses import dataclass, replace

import numpy as np

from .model import lebesgue_weights
from .numerics import seeded_rng


class DivergenceError(RuntimeError):
    """Synapses went non-finite during training."""


@dataclass
class RuleConfig:
    hidden_units: int
    epochs: int
    batch_size: int
    seed: int
    p: float = 2.0
    k: int = 2
    delta: float = 0.4
    learning_rate: float = 0.02
    radius: float = 1.0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if not 2 <= self.k <= self.hidden_units:
            raise ValueError(f"k must be in [2, hidden_units], got {self.k}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.hidden_units < 1:
            raise ValueError("batch_size and hidden_units must be positive")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class SynapseMatrix:
    """Raw synapses (hidden_units x input_dim) plus their training record."""

    S: np.ndarray
    config: RuleConfig
    trained_epochs: int = 0


def rank_gate(h, k, delta):
    """Gate vector g: +1 at the maximum, -delta at the k-th maximum, 0 elsewhere.

    Ties are broken toward the lowest index (stable descending order).
    """
    h = np.asarray(h)
    if h.size < k:
        raise ValueError(f"need at least k={k} entries, got {h.size}")
    order = np.argsort(-h, kind="stable")
    g = np.zeros(h.size)
    g[order[k - 1]] = -delta
    g[order[0]] = 1.0
    return g


def _rank_gate_batch(H, k, delta):
    """Row-wise rank_gate for a batch of current vectors."""
    order = np.argsort(-H, axis=1, kind="stable")
    G = np.zeros_like(H)
    rows = np.arange(H.shape[0])
    G[rows, order[:, k - 1]] = -delta
    G[rows, order[:, 0]] = 1.0
    return G


def _batch_delta(S, batch, p, k, delta, lr):
    """dS for one minibatch at learning rate lr; does not modify S."""
    W = lebesgue_weights(S, p)
    H = batch @ W.T                       # batch x hidden
    G = _rank_gate_batch(H, k, delta)
    gh = (G * H).sum(axis=0)              # sum_b g_bi h_bi, per hidden unit
    return (lr / batch.shape[0]) * (G.T @ batch - gh[:, None] * S)


def kh_update_batch(sm, batch):
    """Update dS for a minibatch at the configured learning rate (not applied)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != sm.S.shape[1]:
        raise ValueError(f"batch shape {batch.shape} does not match input dim {sm.S.shape[1]}")
    if batch.shape[0] == 0:
        raise ValueError("batch is empty")
    cfg = sm.config
    return _batch_delta(sm.S, batch, cfg.p, cfg.k, cfg.delta, cfg.learning_rate)


def train_unsupervised(config, data):
    """Run the winner-take-all rule over shuffled minibatch epochs.

    S starts i.i.d. standard normal scaled by 1/sqrt(input_dim); the learning
    rate decays linearly to zero over epochs. Fully deterministic per seed.
    """
    inputs = data.inputs
    dim = inputs.shape[1]
    rng = seeded_rng(config.seed)
    S = rng.standard_normal((config.hidden_units, dim)) / np.sqrt(dim)
    for epoch in range(config.epochs):
        lr = config.learning_rate * (1.0 - epoch / config.epochs)
        perm = rng.permutation(inputs.shape[0])
        for start in range(0, inputs.shape[0], config.batch_size):
            batch = inputs[perm[start:start + config.batch_size]]
            S += _batch_delta(S, batch, config.p, config.k, config.delta, lr)
        if not np.isfinite(S).all():
            raise DivergenceError(f"synapses diverged during epoch {epoch}")
    return SynapseMatrix(S=S, config=config, trained_epochs=config.epochs)


@dataclass
class ConvergenceReport:
    passed: bool
    fraction_converged: float
    mean_entry: float
    radius: float
    tolerance: float
    min_fraction: float


def convergence_check(sm, tolerance=1e-2, min_fraction=0.10):
    """Steady-state acceptance gate for a trained synapse matrix.

    Passes iff (a) more than ``min_fraction`` of rows satisfy
    | ||S_i||_p^p - R | <= tolerance and (b) the mean synapse exceeds -R/2,
    which rejects collapsed states such as S == -1.
    """
    cfg = sm.config
    row_pnorms = np.sum(np.abs(sm.S) ** cfg.p, axis=1)
    fraction = float(np.mean(np.abs(row_pnorms - cfg.radius) <= tolerance))
    mean_entry = float(sm.S.mean())
    passed = fraction > min_fraction and mean_entry > -cfg.radius / 2.0
    return ConvergenceReport(passed=passed, fraction_converged=fraction,
                             mean_entry=mean_entry, radius=cfg.radius,
                             tolerance=tolerance, min_fraction=min_fraction)


def restrict_rows(sm, keep_mask):
    """New SynapseMatrix holding only the rows where keep_mask is True."""
    keep_mask = np.asarray(keep_mask, dtype=bool)
    new_cfg = replace(sm.config, hidden_units=int(keep_mask.sum()))
    return SynapseMatrix(S=sm.S[keep_mask].copy(), config=new_cfg,
                         trained_epochs=sm.trained_epochs)
