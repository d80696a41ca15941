"""Experiment harness: random trials, coverage, extrapolation, depth and UQ studies.

Every trial draws its own seeds from the master seed through
:class:`numpy.random.SeedSequence`, so a CSV row can be reproduced from the
seeds it records.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import gaussian_kde

from . import gp
from .acpf import DISTRIBUTIONS, box_bounds, label_matrix, sample_matrix
from .al import build_layers, run_al
from .errors import DegenerateDensity, EmptyInput, LengthMismatch, TrialError
from .grid import Network, load_case
from .kernels import build_vdk, full_kernel, reduce_vdk, truncate_vdk

log = logging.getLogger(__name__)

METHODS = ("full_gp", "vdk_gp", "vdk_al")
KERNEL_VARIANTS = ("full", "vdk", "vdk_reduced", "vdk_depth")
CSV_COLUMNS = ("trial", "method", "case", "target", "n_train", "n_test", "mae", "me", "mpv",
               "seed_train", "seed_test", "seed_al")


def metrics(preds, truths, variances) -> dict:
    """Mean and maximum absolute error plus the maximum predictive variance."""
    preds, truths, variances = (np.asarray(a, float).ravel() for a in (preds, truths, variances))
    if not (len(preds) == len(truths) == len(variances)):
        raise LengthMismatch(f"lengths {len(preds)}, {len(truths)}, {len(variances)} differ")
    if len(preds) == 0:
        raise EmptyInput("metrics need at least one prediction")
    err = np.abs(preds - truths)
    return {"mae": float(err.mean()), "me": float(err.max()), "mpv": float(variances.max())}


@dataclass
class TrialResult:
    trial: int
    method: str
    case: str
    target: int
    n_train: int
    n_test: int
    mae: float
    me: float
    mpv: float
    seed_train: int
    seed_test: int
    seed_al: int

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class ExperimentConfig:
    """Trial settings; ``target`` is an external bus id."""

    case: str = "case118"
    target: int = 2
    fraction: float = 0.1
    n_train: int = 100
    n_test: int = 1000
    n_trials: int = 20
    methods: tuple = ("full_gp", "vdk_gp")
    kernel: str = "vdk_reduced"
    depth: int | None = None
    lr: float = 0.1
    iters: int = 200
    al: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        for name in ("n_train", "n_test", "n_trials", "iters", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.fraction < 1:
            raise ValueError("fraction must lie in (0, 1)")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        if self.kernel not in KERNEL_VARIANTS:
            raise ValueError(f"kernel must be one of {KERNEL_VARIANTS}")
        if self.kernel == "vdk_depth" and (self.depth is None or self.depth < 1):
            raise ValueError("vdk_depth needs a positive depth")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


def trial_seeds(master: int, n_trials: int) -> list[tuple[int, int, int]]:
    """Independent ``(train, test, al)`` seeds per trial, derived from ``master``."""
    out = []
    for child in np.random.SeedSequence(master).spawn(n_trials):
        out.append(tuple(int(s) for s in child.generate_state(3, dtype=np.uint32)))
    return out


def make_kernel(net: Network, variant: str, target: int | None = None, depth: int | None = None):
    """Kernel for a variant name; ``target`` is a bus index (needed for depth truncation)."""
    n_coords = 2 * len(net.load_bus_indices)
    if variant == "full":
        return full_kernel(n_coords)
    if variant == "vdk":
        return build_vdk(net)
    if variant == "vdk_reduced":
        return reduce_vdk(build_vdk(net))
    if variant == "vdk_depth":
        return truncate_vdk(build_vdk(net), build_layers(net, target), depth)
    raise ValueError(f"unknown kernel variant {variant!r}")


def _disjoint(a, b):
    rows = {r.tobytes() for r in np.ascontiguousarray(a)}
    return not any(r.tobytes() in rows for r in np.ascontiguousarray(b))


def labelled_set(net, target, fraction, n, seed, dist="uniform"):
    """Draw and label ``n`` hypercube samples; returns ``(x, v)``."""
    return label_matrix(net, sample_matrix(net, fraction, n, dist, seed), target)


def run_trial(cfg: ExperimentConfig, trial: int, seeds, net: Network | None = None) -> list[TrialResult]:
    """One trial: shared train/test data, one result per configured method."""
    net = net or load_case(cfg.case)
    target = net.bus_index(cfg.target)
    s_train, s_test, s_al = seeds
    try:
        x_test, v_test = labelled_set(net, target, cfg.fraction, cfg.n_test, s_test)
        if {"full_gp", "vdk_gp"} & set(cfg.methods):
            x_train, v_train = labelled_set(net, target, cfg.fraction, cfg.n_train, s_train)
            if not _disjoint(x_train, x_test):
                raise RuntimeError("training and test sets overlap")
        box = box_bounds(net, cfg.fraction)
        out = []
        for method in cfg.methods:
            if method == "vdk_al":
                opts = {"batch": 100, "swipes_per_iter": 3, "retune_every": 1, "retune_iters": 25, **cfg.al}
                kern = make_kernel(net, cfg.kernel, target, cfg.depth)
                model, _ = run_al(net, target, cfg.n_train, lr=cfg.lr, fraction=cfg.fraction,
                                  seed=s_al, kernel=kern, **opts)
            else:
                variant = "full" if method == "full_gp" else cfg.kernel
                kern = make_kernel(net, variant, target, cfg.depth)
                model = gp.fit(x_train, v_train, kern, box=box, lr=cfg.lr, iters=cfg.iters)
            mean, var = gp.predict(model, x_test)
            m = metrics(mean, v_test, var)
            out.append(TrialResult(trial, method, cfg.case, cfg.target, model.n, len(v_test),
                                   m["mae"], m["me"], m["mpv"], s_train, s_test, s_al))
        return out
    except Exception as exc:
        raise TrialError(trial, exc) from exc


def _run_trial_job(args):
    cfg_dict, trial, seeds = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), trial, seeds)


def run_trials(cfg: ExperimentConfig, out: str | None = None) -> list[TrialResult]:
    """Run ``cfg.n_trials`` trials (in a process pool if ``cfg.workers > 1``).

    Rows are written in trial order to ``out`` (or ``cfg.out``) as they
    complete.
    """
    seeds = trial_seeds(cfg.seed, cfg.n_trials)
    out = out or cfg.out
    fh = open(out, "w", newline="") if out else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(CSV_COLUMNS)
    results = []
    try:
        if cfg.workers > 1:
            jobs = [(cfg.to_dict(), t, seeds[t]) for t in range(cfg.n_trials)]
            with ProcessPoolExecutor(cfg.workers) as pool:
                batches = pool.map(_run_trial_job, jobs)
                for batch in batches:
                    results.extend(batch)
                    if writer:
                        writer.writerows(r.row() for r in batch)
                        fh.flush()
        else:
            net = load_case(cfg.case)
            for t in range(cfg.n_trials):
                batch = run_trial(cfg, t, seeds[t], net)
                results.extend(batch)
                if writer:
                    writer.writerows(r.row() for r in batch)
                    fh.flush()
                log.info("trial %d: %s", t, {r.method: r.mae for r in batch})
    finally:
        if fh:
            fh.close()
    return results


# -- coverage -----------------------------------------------------------------


def coverage_fractions(errors, sigma, bands=(1, 2, 3)) -> dict:
    """Fraction of ``|error| > c * sigma`` for each band ``c``."""
    errors = np.abs(np.asarray(errors, float))
    sigma = np.asarray(sigma, float)
    if errors.shape != sigma.shape:
        raise LengthMismatch(f"{errors.shape} vs {sigma.shape}")
    if errors.size == 0:
        raise EmptyInput("no residuals")
    return {c: float(np.mean(errors > c * sigma)) for c in bands}


def coverage_study(model, x_test, v_test, bands=(1, 2, 3)) -> dict:
    mean, var = gp.predict(model, x_test)
    return coverage_fractions(mean - np.asarray(v_test), np.sqrt(var), bands)


# -- extrapolation ------------------------------------------------------------


def extrapolation_study(model, net, target, fractions, n_test=1000, seed=0) -> list[dict]:
    """MAE on fresh uniform samples from each (wider) box; ``target`` is a bus index."""
    out = []
    for f, child in zip(fractions, np.random.SeedSequence(seed).spawn(len(fractions))):
        x, v = labelled_set(net, target, f, n_test, child)
        mean, var = gp.predict(model, x)
        out.append({"fraction": f, **metrics(mean, v, var)})
    return out


# -- depth --------------------------------------------------------------------


def depth_study(net, target, depths, train, test, lr=0.1, iters=200, box=None) -> list[dict]:
    """Fit one truncated-VDK model per depth on the same data.

    ``train`` and ``test`` are ``(x, v)`` pairs; ``target`` is a bus index.
    NNK counts are cumulative over layers ``1..depth`` of the unreduced VDK.
    """
    vdk = build_vdk(net)
    layers = build_layers(net, target)
    out = []
    for d in depths:
        kern = truncate_vdk(vdk, layers, d)
        model = gp.fit(*train, kern, box=box, lr=lr, iters=iters)
        mean, var = gp.predict(model, test[0])
        out.append({"depth": d, "n_nnk": kern.n_active, **metrics(mean, test[1], var)})
    return out


# -- uncertainty quantification -----------------------------------------------


def kl_quadrature(p, q, grid, floor=1e-300) -> float:
    """``KL(p || q)`` for densities evaluated on ``grid`` by the trapezoid rule."""
    p = np.maximum(np.asarray(p, float), floor)
    q = np.maximum(np.asarray(q, float), floor)
    return float(max(trapezoid(p * np.log(p / q), grid), 0.0))


def kde_kl(truth, pred, n_grid=2048) -> float:
    """KL(truth || pred) between Silverman-bandwidth Gaussian KDEs of two samples."""
    truth = np.asarray(truth, float)
    pred = np.asarray(pred, float)
    for name, a in (("true", truth), ("predicted", pred)):
        if a.size < 2 or np.ptp(a) == 0:
            raise DegenerateDensity(f"{name} values are constant; no density estimate")
    kt = gaussian_kde(truth, bw_method="silverman")
    kp = gaussian_kde(pred, bw_method="silverman")
    pad = 4 * max(math.sqrt(kt.covariance[0, 0]), math.sqrt(kp.covariance[0, 0]))
    lo = min(truth.min(), pred.min()) - pad
    hi = max(truth.max(), pred.max()) + pad
    grid = np.linspace(lo, hi, n_grid)
    return kl_quadrature(kt(grid), kp(grid), grid)


def uq_study(model, net, target, distributions=("normal", "beta"), n_test=1000, fraction=0.1,
             seed=0) -> dict:
    """KL(true || predicted) of voltage densities under shifted injection laws.

    Returns one entry per distribution plus ``"combined"`` over all of them.
    """
    for d in distributions:
        if d not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {d!r}")
    out = {}
    truths, preds = [], []
    for d, child in zip(distributions, np.random.SeedSequence(seed).spawn(len(distributions))):
        x, v = labelled_set(net, target, fraction, n_test, child, d)
        mean = gp.predict_mean(model, x)
        truths.append(v)
        preds.append(mean)
        out[d] = {"kl": kde_kl(v, mean), "n": len(v), "mae": float(np.mean(np.abs(mean - v)))}
    out["combined"] = {"kl": kde_kl(np.concatenate(truths), np.concatenate(preds)),
                       "n": int(sum(len(v) for v in truths))}
    return out
