"""Exact Gaussian-process regression with VDK or full SE kernels.

Inputs are mapped affinely so the training hypercube becomes ``[-1, 1]`` per
coordinate; targets are centred and scaled by their training mean and
standard deviation. The GP prior has zero mean on the scaled targets. All
hyperparameters are optimised in log space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import CholeskyFailure, DimensionMismatch, NonFiniteGradient
from .kernels import VdkStructure, cross_gram, sq_dists

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
NOISE_CEILING = 1e-4
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class InputMap:
    center: np.ndarray
    half_width: np.ndarray

    @classmethod
    def from_box(cls, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        half = 0.5 * (hi - lo)
        return cls(0.5 * (lo + hi), np.where(half > 0, half, 1.0))

    def __call__(self, x):
        return (np.asarray(x, float) - self.center) / self.half_width


@dataclass
class GpModel:
    """A GP conditioned on training data; treat instances as immutable."""

    kernel: VdkStructure
    x: np.ndarray  # raw training inputs, one row per sample
    y: np.ndarray  # raw targets
    input_map: InputMap
    noise: float
    design: np.ndarray = field(repr=False)  # standardized inputs
    targets: np.ndarray = field(repr=False)  # standardized targets
    y_mean: float = 0.0
    y_scale: float = 1.0
    chol: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    clamp_events: int = 0

    @property
    def n(self):
        return len(self.y)

    def to_dict(self):
        return {
            "format": "vdkflow-gp",
            "version": MODEL_FORMAT_VERSION,
            "kernel": self.kernel.to_dict(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "input_center": self.input_map.center.tolist(),
            "input_half_width": self.input_map.half_width.tolist(),
            "noise": self.noise,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "vdkflow-gp" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a vdkflow GP model file of a supported version")
        imap = InputMap(np.array(d["input_center"]), np.array(d["input_half_width"]))
        return assemble(VdkStructure.from_dict(d["kernel"]), np.array(d["x"]), np.array(d["y"]),
                        input_map=imap, noise=d["noise"], escalate=False)


def _target_scaling(y):
    mean = float(np.mean(y))
    sd = float(np.std(y))
    return mean, (sd if sd > 1e-12 * max(1.0, abs(mean)) else 1.0)


def _cholesky(k, noise, escalate=True):
    """Cholesky of ``k + noise*I``, raising noise x10 up to the ceiling on failure."""
    n = len(k)
    while True:
        try:
            return np.linalg.cholesky(k + noise * np.eye(n)), noise
        except np.linalg.LinAlgError:
            if not escalate or noise * 10 > NOISE_CEILING * (1 + 1e-9):
                raise CholeskyFailure(f"K + {noise:.1e} I is not positive definite") from None
            noise *= 10
            log.debug("Cholesky failed; noise raised to %.1e", noise)


def _training_data(kernel, x, y):
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).ravel()
    if len(x) != len(y):
        raise DimensionMismatch(f"{len(x)} inputs but {len(y)} targets")
    if x.shape[1] != kernel.n_coords:
        raise DimensionMismatch(f"inputs have {x.shape[1]} coordinates, kernel expects {kernel.n_coords}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    return x, y


def assemble(kernel, x, y, box=None, input_map=None, noise=NOISE_FLOOR, escalate=True) -> GpModel:
    """Condition a GP with fixed hyperparameters on ``(x, y)``."""
    x, y = _training_data(kernel, x, y)
    if input_map is None:
        lo, hi = box if box is not None else (x.min(axis=0), x.max(axis=0))
        input_map = InputMap.from_box(lo, hi)
    z = input_map(x)
    y_mean, y_scale = _target_scaling(y)
    t = (y - y_mean) / y_scale
    k = cross_gram(kernel, z, z)
    k = 0.5 * (k + k.T)
    chol, noise = _cholesky(k, noise, escalate)
    alpha = sla.cho_solve((chol, True), t)
    return GpModel(kernel, x, y, input_map, noise, z, t, y_mean, y_scale, chol, alpha)


# -- likelihood ---------------------------------------------------------------


def _lml_terms(kernel, d2, t, noise, want_grad, learn_noise=False, escalate=True):
    comps = np.exp(-d2 / (2.0 * kernel.lengthscale**2))  # (n, n, A)
    amp2 = kernel.amplitude**2
    k = comps @ amp2
    k = 0.5 * (k + k.T)
    chol, used = _cholesky(k, noise, escalate)
    alpha = sla.cho_solve((chol, True), t)
    n = len(t)
    lml = -0.5 * t @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    if not want_grad:
        return lml, None, used
    kinv = sla.cho_solve((chol, True), np.eye(n))
    w = np.outer(alpha, alpha) - kinv
    # dK/dlog(amp_a) = 2 amp_a^2 C_a ;  dK/dlog(ls_a) = amp_a^2 C_a d2_a / ls_a^2
    wc = np.einsum("ij,ija->a", w, comps)
    wcd = np.einsum("ij,ija->a", w, comps * d2)
    g_amp = wc * amp2
    g_ls = 0.5 * wcd * amp2 / kernel.lengthscale**2
    grad = np.r_[g_amp, g_ls]
    if learn_noise:
        grad = np.r_[grad, 0.5 * used * np.trace(w)]
    return lml, grad, used


def log_marginal_likelihood(model: GpModel) -> float:
    t = model.targets
    lml = -0.5 * t @ model.alpha - np.sum(np.log(np.diag(model.chol)))
    return float(lml - 0.5 * model.n * math.log(2 * math.pi))


def lml_gradient(model: GpModel, learn_noise: bool = False) -> np.ndarray:
    """Gradient of the LML w.r.t. ``[log amplitudes, log lengthscales(, log noise)]``."""
    d2 = sq_dists(model.kernel, model.design, model.design)
    _, grad, _ = _lml_terms(model.kernel, d2, model.targets, model.noise, True, learn_noise, escalate=False)
    return grad


# -- fitting ------------------------------------------------------------------


def optimize_hypers(kernel, z, t, lr=0.1, iters=200, noise=NOISE_FLOOR, learn_noise=False, eps=1e-8):
    """Adaptive-gradient ascent on the LML in log-hyperparameter space.

    Returns ``(kernel, noise, lml_trace)`` for the best iterate seen.
    """
    d2 = sq_dists(kernel, z, z)
    theta = kernel.log_params
    log_noise = math.log(noise)
    if learn_noise:
        theta = np.r_[theta, log_noise]
    acc = np.zeros_like(theta)
    best = (-np.inf, kernel, noise)
    trace = []
    for _ in range(iters + 1):
        if not np.all(np.abs(theta) < 700):
            raise NonFiniteGradient("hyperparameters overflowed during the search")
        kern = kernel.with_log_params(theta)
        cur_noise = math.exp(theta[-1]) if learn_noise else noise
        lml, grad, used = _lml_terms(kern, d2, t, max(cur_noise, NOISE_FLOOR), True, learn_noise)
        if not np.all(np.isfinite(grad)) or not np.isfinite(lml):
            raise NonFiniteGradient("non-finite LML or gradient during hyperparameter search")
        trace.append(lml)
        if lml > best[0]:
            best = (lml, kern, used)
        acc += grad * grad
        theta = theta + lr * grad / (np.sqrt(acc) + eps)
    return best[1], best[2], trace


def fit(x, y, kernel, box=None, lr=0.1, iters=200, noise=NOISE_FLOOR, learn_noise=False,
        input_map=None) -> GpModel:
    """Maximum-likelihood fit of ``kernel``'s hyperparameters, then condition on the data."""
    x, y = _training_data(kernel, x, y)
    if len(y) < 2:
        raise ValueError("fit needs at least two training pairs")
    if not lr > 0:
        raise ValueError("lr must be positive")
    if input_map is None:
        lo, hi = box if box is not None else (x.min(axis=0), x.max(axis=0))
        input_map = InputMap.from_box(lo, hi)
    z = input_map(x)
    y_mean, y_scale = _target_scaling(y)
    t = (y - y_mean) / y_scale
    if iters > 0:
        kernel, noise, _ = optimize_hypers(kernel, z, t, lr, iters, noise, learn_noise)
    return assemble(kernel, x, y, input_map=input_map, noise=noise)


def retune(model: GpModel, lr=0.1, iters=25, learn_noise=False) -> GpModel:
    """Warm-started hyperparameter refit on the model's own data."""
    return fit(model.x, model.y, model.kernel, lr=lr, iters=iters, noise=model.noise if learn_noise else NOISE_FLOOR,
               learn_noise=learn_noise, input_map=model.input_map)


# -- prediction ---------------------------------------------------------------


def _query(model, s):
    s = np.asarray(s, float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    if s.shape[1] != model.kernel.n_coords:
        raise DimensionMismatch(f"query has {s.shape[1]} coordinates, model expects {model.kernel.n_coords}")
    return model.input_map(s), single


def predict(model: GpModel, s):
    """Predictive mean and latent variance in physical units."""
    z, single = _query(model, s)
    ks = cross_gram(model.kernel, z, model.design)
    mean = model.y_mean + model.y_scale * (ks @ model.alpha)
    v = sla.solve_triangular(model.chol, ks.T, lower=True, check_finite=False)
    var = model.kernel.prior_variance() - np.sum(v * v, axis=0)
    neg = var < 0
    if neg.any():
        model.clamp_events += int(neg.sum())
        log.debug("clamped %d negative predictive variances (min %.3e)", neg.sum(), var.min())
        var = np.where(neg, 0.0, var)
    var = var * model.y_scale**2
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def predict_mean(model: GpModel, s):
    return predict(model, s)[0]


def predict_var(model: GpModel, s):
    return predict(model, s)[1]


# -- incremental update -------------------------------------------------------


def update(model: GpModel, s, v) -> GpModel:
    """Add one labelled sample by bordering the Cholesky factor."""
    s = np.asarray(s, float).ravel()
    z, _ = _query(model, s)
    kvec = cross_gram(model.kernel, z, model.design)[0]
    kss = model.kernel.prior_variance() + model.noise
    row = sla.solve_triangular(model.chol, kvec, lower=True, check_finite=False)
    d2 = kss - row @ row
    x = np.vstack([model.x, s])
    y = np.r_[model.y, float(v)]
    if not d2 > 0 or not np.isfinite(d2):
        log.warning("bordered Cholesky lost definiteness; refactorizing with escalated noise")
        return assemble(model.kernel, x, y, input_map=model.input_map, noise=model.noise * 10)
    n = model.n
    chol = np.zeros((n + 1, n + 1))
    chol[:n, :n] = model.chol
    chol[n, :n] = row
    chol[n, n] = math.sqrt(d2)
    y_mean, y_scale = _target_scaling(y)
    t = (y - y_mean) / y_scale
    alpha = sla.cho_solve((chol, True), t)
    return replace(model, x=x, y=y, design=np.vstack([model.design, z]), targets=t,
                   y_mean=y_mean, y_scale=y_scale, chol=chol, alpha=alpha, clamp_events=0)


# -- information gain ---------------------------------------------------------


def information_gain(kernel: VdkStructure, a, noise: float) -> float:
    """``0.5 * log det(I + K_A / noise)`` for the inputs in ``a`` (rows)."""
    if not noise > 0:
        raise ValueError("noise must be positive")
    a = np.asarray(a, float)
    if a.size == 0:
        return 0.0
    a = np.atleast_2d(a)
    k = cross_gram(kernel, a, a)
    m = np.eye(len(a)) + 0.5 * (k + k.T) / noise
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise CholeskyFailure("I + K/noise is not positive definite") from None
    return float(np.sum(np.log(np.diag(chol))))
