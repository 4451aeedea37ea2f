"""Automated synapse post-processing.

Per-row variances of the synapse matrix are modeled with a mixture of up to
four log-normal components (a Gaussian mixture on log variances). A
likelihood ratio test picks the component count; if more than one mode is
present, rows above the midpoint of the two highest component means are
ablated as unconverged.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import chi2

from .localrule import SynapseMatrix, restrict_rows
from .numerics import seeded_rng

_SIGMA_FLOOR = 1e-10
_LOG_2PI = np.log(2.0 * np.pi)


class MixtureFitError(RuntimeError):
    """Every EM restart collapsed to a degenerate component."""


class AllRowsPrunedError(RuntimeError):
    """The threshold would remove every hidden unit."""


@dataclass
class LogNormalMixture:
    """Mixture of log-normal components: values whose logs are Gaussian.

    ``weights`` sum to 1; ``log_means``/``log_stds`` parameterize each
    component in log space. ``ll_trace`` records the EM log-likelihood per
    iteration of the winning restart (monotone non-decreasing).
    """

    weights: np.ndarray
    log_means: np.ndarray
    log_stds: np.ndarray
    log_likelihood: float
    ll_trace: np.ndarray

    @property
    def n_components(self):
        return len(self.weights)

    def component_means(self):
        """Mean of each log-normal component: exp(mu + sigma^2 / 2)."""
        return np.exp(self.log_means + self.log_stds ** 2 / 2.0)


@dataclass
class PruneReport:
    variances: np.ndarray
    selected_components: Optional[int]
    threshold: Optional[float]
    pruned_rows: np.ndarray


def row_variances(S):
    """Unbiased (N-1 denominator) variance of each synapse row."""
    mat = S.S if isinstance(S, SynapseMatrix) else np.asarray(S, dtype=np.float64)
    return np.var(mat, axis=1, ddof=1)


def _log_gauss(y, mu, sigma):
    z = (y[:, None] - mu[None, :]) / sigma[None, :]
    return -0.5 * (z * z + _LOG_2PI) - np.log(sigma)[None, :]


def _mixture_ll(y, w, mu, sigma):
    comp = _log_gauss(y, mu, sigma) + np.log(w)[None, :]
    m = comp.max(axis=1, keepdims=True)
    return float(np.sum(m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))))


def _em(y, w, mu, sigma, tol, max_iter):
    """Standard scalar Gaussian-mixture EM; raises on component collapse."""
    trace = []
    prev = -np.inf
    for _ in range(max_iter):
        comp = _log_gauss(y, mu, sigma) + np.log(w)[None, :]
        m = comp.max(axis=1, keepdims=True)
        log_norm = m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(comp - log_norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise _DegenerateRestart
        w = nk / y.size
        mu = (resp * y[:, None]).sum(axis=0) / nk
        var = (resp * (y[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        sigma = np.sqrt(var)
        if np.any(sigma < _SIGMA_FLOOR):
            raise _DegenerateRestart
        if ll - prev < tol and np.isfinite(prev):
            break
        prev = ll
    final = _mixture_ll(y, w, mu, sigma)
    trace.append(final)
    return w, mu, sigma, final, np.array(trace)


class _DegenerateRestart(Exception):
    pass


def fit_lognormal_mixture(values, num_components, seed, restarts=5, tol=1e-8,
                          max_iter=500, extra_inits=()):
    """Best-of-restarts EM fit of a log-normal mixture to positive values.

    A single component has the closed-form MLE and needs no EM. Restarts are
    seeded and the best model is chosen by (log-likelihood, restart index) so
    the result is deterministic. ``extra_inits`` may carry warm-start
    parameter triples (weights, log_means, log_stds) tried after the random
    restarts.
    """
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0) or not np.isfinite(values).all():
        raise ValueError("values must be positive and finite")
    if not 1 <= num_components <= 4:
        raise ValueError(f"num_components must be in 1..4, got {num_components}")
    if values.size < 10 * num_components:
        raise ValueError(f"need at least {10 * num_components} values, got {values.size}")
    y = np.log(values)

    if num_components == 1:
        mu = float(y.mean())
        sigma = float(y.std())  # MLE, consistent with what EM maximizes
        if sigma < _SIGMA_FLOOR:
            raise MixtureFitError("values are (log-)constant; no spread to model")
        ll = _mixture_ll(y, np.array([1.0]), np.array([mu]), np.array([sigma]))
        return LogNormalMixture(weights=np.array([1.0]), log_means=np.array([mu]),
                                log_stds=np.array([sigma]), log_likelihood=ll,
                                ll_trace=np.array([ll]))

    rng = seeded_rng(seed)
    global_sigma = max(float(y.std()), _SIGMA_FLOOR * 10)
    best = None
    for _ in range(restarts):
        idx = rng.choice(y.size, size=num_components, replace=False)
        w0 = np.full(num_components, 1.0 / num_components)
        mu0 = np.sort(y[idx])
        sigma0 = np.full(num_components, global_sigma)
        try:
            w, mu, sigma, ll, trace = _em(y, w0, mu0, sigma0, tol, max_iter)
        except _DegenerateRestart:
            continue
        if best is None or ll > best[3]:
            best = (w, mu, sigma, ll, trace)
    for w0, mu0, sigma0 in extra_inits:
        try:
            w, mu, sigma, ll, trace = _em(y, np.asarray(w0, dtype=np.float64),
                                          np.asarray(mu0, dtype=np.float64),
                                          np.asarray(sigma0, dtype=np.float64),
                                          tol, max_iter)
        except _DegenerateRestart:
            continue
        if best is None or ll > best[3]:
            best = (w, mu, sigma, ll, trace)
    if best is None:
        raise MixtureFitError(f"all {restarts} EM restarts degenerated "
                              f"for {num_components} components")
    w, mu, sigma, ll, trace = best
    order = np.argsort(mu)
    return LogNormalMixture(weights=w[order], log_means=mu[order],
                            log_stds=sigma[order], log_likelihood=ll,
                            ll_trace=trace)


def _split_widest(model):
    """Warm start for c+1 components: split the heaviest component in two."""
    i = int(np.argmax(model.weights))
    w = np.concatenate([model.weights, [model.weights[i] / 2.0]])
    w[i] /= 2.0
    mu = np.concatenate([model.log_means, [model.log_means[i] + model.log_stds[i] / 2.0]])
    mu[i] -= model.log_stds[i] / 2.0
    sigma = np.concatenate([model.log_stds, [model.log_stds[i]]])
    return w / w.sum(), mu, sigma


def select_mixture_lrt(values, alpha_level=0.01, seed=0, max_components=4):
    """Pick the component count by successive likelihood ratio tests.

    Model c+1 replaces model c only when 2*(LL_{c+1} - LL_c) exceeds the
    chi-square(df=3) quantile at 1 - alpha_level; the scan stops at the first
    non-rejection. Each step warm-starts from a split of the accepted model,
    keeping the sequence properly nested.
    """
    cutoff = float(chi2.ppf(1.0 - alpha_level, df=3))
    current = fit_lognormal_mixture(values, 1, seed)
    for c in range(2, max_components + 1):
        if values.size < 10 * c:
            break
        candidate = fit_lognormal_mixture(values, c, seed + c,
                                          extra_inits=[_split_widest(current)])
        stat = 2.0 * (candidate.log_likelihood - current.log_likelihood)
        if stat > cutoff:
            current = candidate
        else:
            break
    return current


def derive_threshold(model):
    """Pruning cutoff: midpoint of the two largest component means; None if uni-modal."""
    if model.n_components < 2:
        return None
    means = np.sort(model.component_means())
    return float((means[-1] + means[-2]) / 2.0)


def prune(sm, threshold, selected_components=None):
    """Remove whole hidden rows whose synapse variance exceeds the threshold.

    Idempotent at a fixed threshold. Raises if nothing would survive.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    variances = row_variances(sm)
    noisy = variances > threshold
    if noisy.all():
        raise AllRowsPrunedError(f"threshold {threshold} prunes all {len(variances)} rows")
    pruned = restrict_rows(sm, ~noisy)
    report = PruneReport(variances=variances,
                         selected_components=selected_components,
                         threshold=float(threshold),
                         pruned_rows=np.nonzero(noisy)[0])
    return pruned, report


def auto_prune(sm, seed=0, alpha_level=0.01, max_components=4, threshold=None):
    """Full post-processing: mixture selection, threshold, ablation.

    A manual ``threshold`` bypasses model selection entirely. With an
    automatically selected uni-modal distribution no pruning is performed and
    the synapses are returned unchanged.
    """
    variances = row_variances(sm)
    if threshold is not None:
        return prune(sm, threshold)
    model = select_mixture_lrt(variances, alpha_level=alpha_level, seed=seed,
                               max_components=max_components)
    auto_threshold = derive_threshold(model)
    if auto_threshold is None:
        report = PruneReport(variances=variances, selected_components=1,
                             threshold=None, pruned_rows=np.array([], dtype=int))
        return sm, report
    pruned, report = prune(sm, auto_threshold,
                           selected_components=model.n_components)
    return pruned, report
