"""Covariance spectra of representations and power-law exponent estimation.

A power law lambda_n = lambda_1 * n^-alpha appears as a line of slope -alpha
on log-log axes of the normalized spectrum, and the normalized spectrum is
invariant under index rescaling n -> a*n; both facts drive the fitting and
the scale-invariance probe here.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import forward
from .numerics import covariance, linear_fit, seeded_rng, sym_eig_descending


class DegenerateSpectrumError(ValueError):
    """Representations are constant; there is no spectrum to normalize."""


@dataclass
class Spectrum:
    lambdas: np.ndarray      # descending covariance eigenvalues
    normalized: np.ndarray   # lambdas / lambdas[0]
    source: str
    dim: int


@dataclass
class PowerLawFit:
    alpha: float
    alpha_err: float
    fit_range: tuple
    n_used: int
    n_excluded: int


_FORWARD_CHUNK = 2048


def _representations(model, inputs, layer):
    """Collect the chosen layer for all inputs; model=None means identity."""
    if model is None:
        return np.asarray(inputs, dtype=np.float64)
    if layer not in ("pre", "post"):
        raise ValueError(f"layer must be 'pre' or 'post', got {layer!r}")
    chunks = []
    for start in range(0, inputs.shape[0], _FORWARD_CHUNK):
        h, hhat, _ = forward(model, inputs[start:start + _FORWARD_CHUNK])
        chunks.append(h if layer == "pre" else hhat)
    return np.concatenate(chunks, axis=0)


def spectrum_of_data(reps, source):
    """Covariance spectrum of an already-collected representation matrix."""
    spec = sym_eig_descending(covariance(reps))
    lam = spec.eigenvalues
    if lam[0] <= 0:
        raise DegenerateSpectrumError(f"leading eigenvalue {lam[0]} is not positive "
                                      f"for {source!r}")
    return Spectrum(lambdas=lam, normalized=lam / lam[0], source=source,
                    dim=lam.size)


def representation_spectrum(model, data, layer="pre"):
    """Ordered, normalized covariance spectrum of a model's representations.

    ``layer`` picks the currents h (default, "pre") or the features
    ReLU(h)^n ("post"). ``model=None`` yields the spectrum of the data
    itself.
    """
    if data.inputs.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    reps = _representations(model, data.inputs, layer)
    tag = "identity" if model is None else f"model-{layer}"
    return spectrum_of_data(reps, source=f"{data.name}:{tag}")


def fit_power_exponent(spec, n_min, n_max):
    """OLS of log(normalized lambda) on log(n) over indices [n_min, n_max].

    Non-positive normalized eigenvalues inside the window are excluded and
    counted. alpha is the sign-flipped slope.
    """
    if not 1 <= n_min < n_max <= spec.dim:
        raise ValueError(f"invalid fit range [{n_min}, {n_max}] for dim {spec.dim}")
    idx = np.arange(n_min, n_max + 1)
    lam = spec.normalized[n_min - 1:n_max]
    usable = lam > 0
    excluded = int((~usable).sum())
    if usable.sum() < 3:
        raise ValueError(f"only {int(usable.sum())} usable points in [{n_min}, {n_max}]")
    fit = linear_fit(np.log(idx[usable].astype(np.float64)), np.log(lam[usable]))
    return PowerLawFit(alpha=-fit.slope, alpha_err=fit.slope_stderr,
                       fit_range=(int(n_min), int(n_max)),
                       n_used=int(usable.sum()), n_excluded=excluded)


def default_fit_range(dim, n_min=11, n_max=None):
    """Fit window staying clear of the spectrum head and boundary tail."""
    if n_max is None:
        n_max = min(500, dim // 2)
    n_max = min(n_max, dim)
    if n_max <= n_min:
        raise ValueError(f"dimension {dim} too small for a [{n_min}, {n_max}] window")
    return int(n_min), int(n_max)


def _scaled_range(n_min, n_max, ratio, scaled_dim):
    lo = max(1, int(round(n_min * ratio)))
    hi = min(scaled_dim, max(lo + 2, int(round(n_max * ratio))))
    if hi - lo < 2:
        raise ValueError(f"scaled dim {scaled_dim} too small to fit over [{lo}, {hi}]")
    return lo, hi


def crop_centered_patch(inputs, scale, side, channels=3):
    """Centered square sub-patch covering ~scale of the pixels per channel.

    Inputs must be flattened plane-major (all of channel 0, then 1, ...).
    Returns the re-flattened patch data.
    """
    m = max(1, int(round(side * np.sqrt(scale))))
    m = min(m, side)
    off = (side - m) // 2
    imgs = inputs.reshape(inputs.shape[0], channels, side, side)
    patch = imgs[:, :, off:off + m, off:off + m]
    return patch.reshape(inputs.shape[0], channels * m * m), m


def scale_invariance_probe(model, data, scales, mode, seed, layer="pre",
                           n_min=11, n_max=None, channels=3):
    """Re-estimate the power-law exponent at several scales.

    ``subsample_hidden`` keeps a random unit subset of each representation;
    ``crop_input`` keeps a centered image patch and applies only to data
    spectra (model=None) since an encoder is bound to its full input size.
    Fit windows shrink proportionally with the scaled dimension. Returns a
    list of (scale, PowerLawFit).
    """
    if mode not in ("subsample_hidden", "crop_input"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "crop_input" and model is not None:
        raise ValueError("crop_input applies to data spectra only (model=None)")
    reps = _representations(model, data.inputs, layer)
    dim = reps.shape[1]
    base_min, base_max = default_fit_range(dim, n_min=n_min, n_max=n_max)
    rng = seeded_rng(seed)
    results = []
    for scale in scales:
        if not 0 < scale <= 1:
            raise ValueError(f"scales must lie in (0, 1], got {scale}")
        if mode == "subsample_hidden":
            keep = max(3, int(round(scale * dim)))
            subset = np.sort(rng.choice(dim, size=keep, replace=False))
            scaled = reps[:, subset]
        else:
            side = int(round(np.sqrt(dim / channels)))
            if channels * side * side != dim:
                raise ValueError(f"dim {dim} is not channels x side^2")
            scaled, _ = crop_centered_patch(reps, scale, side, channels)
        spec = spectrum_of_data(scaled, source=f"{data.name}:{mode}@{scale}")
        lo, hi = _scaled_range(base_min, base_max, scaled.shape[1] / dim, spec.dim)
        results.append((scale, fit_power_exponent(spec, lo, hi)))
    return results
