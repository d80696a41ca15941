"""Newton-Raphson AC power flow and hypercube samplers for its inputs.

Injection samples use the load convention: ``p`` and ``q`` hold each bus's
demand in per-unit, and the net injection at a bus is its scheduled
generation minus that demand. Only buses with a nonzero base load vary.

The learning code works on a flattened coordinate vector holding the p and
q demand of every load bus, interleaved: ``[p_l0, q_l0, p_l1, q_l1, ...]``
with ``l0 < l1 < ...`` the entries of ``Network.load_bus_indices``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.stats import truncnorm

from .errors import (
    IndexOutOfRange,
    NoLoadBuses,
    NonConvergence,
    SingularJacobian,
    TooManyFailures,
    VdkflowError,
)
from .grid import BusKind, Network

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("uniform", "normal", "beta")
DENSE_LIMIT = 600  # Newton systems up to this size use a dense LU


@dataclass
class InjectionSample:
    p: np.ndarray
    q: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"p": self.p.tolist(), "q": self.q.tolist(), "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["p"], float), np.asarray(d["q"], float), dict(d.get("meta", {})))


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    iterations: int
    max_mismatch: float


# -- coordinates --------------------------------------------------------------


def coord_buses(net: Network) -> np.ndarray:
    """Bus index owning each flattened coordinate."""
    return np.repeat(np.asarray(net.load_bus_indices, dtype=int), 2)


def base_vector(net: Network) -> np.ndarray:
    p, q = net.base_load_pu
    idx = np.asarray(net.load_bus_indices, dtype=int)
    out = np.empty(2 * len(idx))
    out[0::2] = p[idx]
    out[1::2] = q[idx]
    return out


def box_bounds(net: Network, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate bounds of the +-fraction hypercube around the base load."""
    base = base_vector(net)
    a, b = (1 - fraction) * base, (1 + fraction) * base
    return np.minimum(a, b), np.maximum(a, b)


def to_vector(net: Network, s: InjectionSample) -> np.ndarray:
    idx = np.asarray(net.load_bus_indices, dtype=int)
    out = np.empty(2 * len(idx))
    out[0::2] = s.p[idx]
    out[1::2] = s.q[idx]
    return out


def from_vector(net: Network, x, meta=None) -> InjectionSample:
    p, q = (a.copy() for a in net.base_load_pu)
    idx = np.asarray(net.load_bus_indices, dtype=int)
    x = np.asarray(x, dtype=float)
    p[idx] = x[0::2]
    q[idx] = x[1::2]
    return InjectionSample(p, q, dict(meta or {}))


def base_sample(net: Network, scale: float = 1.0) -> InjectionSample:
    p, q = net.base_load_pu
    return InjectionSample(scale * p, scale * q, {"distribution": "base", "scale": scale})


# -- solver -------------------------------------------------------------------


def jacobian(ybus, v, pv, pq) -> sp.csc_matrix:
    """Polar power-flow Jacobian d[P(pv,pq), Q(pq)] / d[theta(pv,pq), |V|(pq)]."""
    r, c, d, m = _jacobian_entries(ybus, v, pv, pq)
    return sp.csc_matrix((d, (r, c)), shape=(m, m))


def _jacobian_entries(ybus, v, pv, pq):
    n = ybus.shape[0]
    y = ybus.tocoo()
    ibus = ybus @ v
    vn = v / np.abs(v)
    diag = np.arange(n)
    # dS/dVm, dS/dVa: one term per admittance entry plus a diagonal term;
    # duplicate coordinates are summed when the sparse matrix is assembled
    rows = np.r_[y.row, diag]
    cols = np.r_[y.col, diag]
    ds_dvm = np.r_[v[y.row] * np.conj(y.data * vn[y.col]), np.conj(ibus) * vn]
    ds_dva = np.r_[-1j * v[y.row] * np.conj(y.data * v[y.col]), 1j * v * np.conj(ibus)]

    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)
    pos_pvpq = np.full(n, -1)
    pos_pvpq[pvpq] = np.arange(npvpq)
    pos_pq = np.full(n, -1)
    pos_pq[pq] = np.arange(len(pq))

    blocks = []
    for rpos, roff, cpos, coff, data in (
        (pos_pvpq, 0, pos_pvpq, 0, ds_dva.real),
        (pos_pvpq, 0, pos_pq, npvpq, ds_dvm.real),
        (pos_pq, npvpq, pos_pvpq, 0, ds_dva.imag),
        (pos_pq, npvpq, pos_pq, npvpq, ds_dvm.imag),
    ):
        keep = (rpos[rows] >= 0) & (cpos[cols] >= 0)
        blocks.append((rpos[rows[keep]] + roff, cpos[cols[keep]] + coff, data[keep]))
    r, c, d = (np.concatenate(x) for x in zip(*blocks))
    return r, c, d, npvpq + len(pq)


def _newton_step(ybus, v, pv, pq, f, it):
    r, c, d, m = _jacobian_entries(ybus, v, pv, pq)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            if m <= DENSE_LIMIT:
                jac = np.zeros((m, m))
                np.add.at(jac, (r, c), d)
                lu = scipy.linalg.lu_factor(jac, check_finite=False)
                if np.min(np.abs(np.diag(lu[0]))) == 0.0:
                    raise SingularJacobian(it)
                dx = scipy.linalg.lu_solve(lu, -f, check_finite=False)
            else:
                dx = splu(sp.csc_matrix((d, (r, c)), shape=(m, m))).solve(-f)
    except (RuntimeError, Warning, np.linalg.LinAlgError):
        raise SingularJacobian(it) from None
    if not np.all(np.isfinite(dx)):
        raise SingularJacobian(it)
    return dx


def mismatch(ybus, v, sbus, pv, pq) -> np.ndarray:
    mis = v * np.conj(ybus @ v) - sbus
    return np.r_[mis[np.r_[pv, pq]].real, mis[pq].imag]


def scheduled_injection(net: Network, s: InjectionSample) -> np.ndarray:
    """Net complex injection (generation - demand) in per-unit."""
    return net.gen_p_pu - s.p - 1j * s.q


def _newton(ybus, v, sbus, pv, pq, tol, max_iter):
    vm, va = np.abs(v), np.angle(v)
    npvpq = len(pv) + len(pq)
    it = 0
    while True:
        f = mismatch(ybus, v, sbus, pv, pq)
        it += 1
        err = np.max(np.abs(f)) if f.size else 0.0
        if not np.isfinite(err):
            raise NonConvergence(it, float("inf"))
        if err < tol:
            return v, it, err
        if it > max_iter:
            raise NonConvergence(it - 1, err)
        dx = _newton_step(ybus, v, pv, pq, f, it)
        pvpq = np.r_[pv, pq]
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        if np.any(vm[pq] <= 0):
            raise NonConvergence(it, err)
        v = vm * np.exp(1j * va)


def solve_acpf(
    net: Network,
    s: InjectionSample,
    tol: float = 1e-8,
    max_iter: int = 30,
    flat_start: bool = True,
    enforce_q_limits: bool = False,
) -> PowerFlowSolution:
    """Solve the AC power flow for demand sample ``s``.

    ``iterations`` counts mismatch evaluations, so a start point that already
    satisfies the equations reports 1. With ``enforce_q_limits`` a PV bus
    whose generator leaves its finite reactive range is switched to PQ at the
    violated limit and the flow is re-solved.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    ybus = net.ybus
    vset = net.v_setpoint
    pv, pq = net.pv.copy(), net.pq.copy()
    if flat_start:
        vm = np.ones(net.n_bus)
        va = np.zeros(net.n_bus)
    else:
        vm = np.array([b.base_v_mag for b in net.buses])
        va = np.radians([b.base_v_ang for b in net.buses])
    gen_buses = np.r_[pv, net.slack]
    vm[gen_buses] = vset[gen_buses]
    va = va - va[net.slack]
    v = vm * np.exp(1j * va)
    sbus = scheduled_injection(net, s)

    total = 0
    while True:
        v, it, err = _newton(ybus, v, sbus, pv, pq, tol, max_iter)
        total += it
        if not enforce_q_limits or len(pv) == 0:
            break
        qgen = (v * np.conj(ybus @ v)).imag[pv] + s.q[pv]
        lims = np.array([net.buses[i].gen_q_limits for i in pv]) / net.base_mva
        lo, hi = lims[:, 0], lims[:, 1]
        over = np.isfinite(hi) & (qgen > hi + tol)
        under = np.isfinite(lo) & (qgen < lo - tol)
        viol = over | under
        if not viol.any():
            break
        fixed = np.where(over, hi, lo)[viol]
        moved = pv[viol]
        sbus = sbus.copy()
        sbus[moved] = sbus[moved].real + 1j * (fixed - s.q[moved])
        pv = pv[~viol]
        pq = np.sort(np.r_[pq, moved])
        log.debug("PV->PQ switch at buses %s", moved.tolist())
    return PowerFlowSolution(np.abs(v), np.angle(v), total, float(err))


# -- sampling -----------------------------------------------------------------


def _unit_draws(dist, rng, shape, sigma=None, beta_shape=(2.0, 5.0)):
    """Draws on [-1, 1] (box-normalised coordinates)."""
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape)
    if dist == "normal":
        sd = 1.0 / 3.0 if sigma is None else sigma
        z = truncnorm.rvs(-1.0 / sd, 1.0 / sd, size=shape, random_state=rng)
        return z * sd
    if dist == "beta":
        a, b = beta_shape
        return 2.0 * rng.beta(a, b, size=shape) - 1.0
    raise ValueError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def sample_matrix(net, fraction, n, dist="uniform", seed=0, sigma=None, beta_shape=(2.0, 5.0)):
    """Hypercube draws as an ``(n, 2 * n_load)`` array of flattened coordinates.

    ``sigma`` is the normal's standard deviation as a fraction of the box
    half-width (default 1/3, i.e. fraction/3 of the base value).
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not net.load_bus_indices:
        raise NoLoadBuses("network has no buses with nonzero base load")
    rng = np.random.default_rng(seed)
    lo, hi = box_bounds(net, fraction)
    u = _unit_draws(dist, rng, (n, lo.size), sigma, beta_shape)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * u


def sample_hypercube(net, fraction, n, dist="uniform", seed=0, **kw) -> list[InjectionSample]:
    x = sample_matrix(net, fraction, n, dist, seed, **kw)
    meta = {"distribution": dist, "hypercube_fraction": fraction, "seed": int(seed)}
    return [from_vector(net, row, meta) for row in x]


# -- labelling ----------------------------------------------------------------


class InvalidTarget(VdkflowError, ValueError):
    pass


def check_target(net: Network, target: int):
    if not 0 <= target < net.n_bus:
        raise IndexOutOfRange(f"bus index {target} outside [0, {net.n_bus})")
    if net.buses[target].kind is not BusKind.PQ:
        raise InvalidTarget(
            f"bus {net.buses[target].id} is {net.buses[target].kind.value}; "
            "its voltage magnitude is fixed"
        )


def label_samples(net, samples, target_bus, max_failure_rate=0.1, **solver_opts):
    """Solve every sample and return ``(kept_samples, voltages)``.

    Non-convergent samples are dropped with a warning; more than
    ``max_failure_rate`` of them raises :class:`TooManyFailures`.
    """
    check_target(net, target_bus)
    kept, volts, failed = [], [], []
    for k, s in enumerate(samples):
        try:
            sol = solve_acpf(net, s, **solver_opts)
        except (NonConvergence, SingularJacobian) as exc:
            log.warning("sample %d dropped: %s", k, exc)
            failed.append(k)
            continue
        kept.append(s)
        volts.append(sol.v_mag[target_bus])
    if len(failed) > max_failure_rate * len(samples):
        raise TooManyFailures(f"{len(failed)} of {len(samples)} samples failed to converge")
    return kept, np.array(volts)


def label_matrix(net, x, target_bus, **solver_opts):
    """Label flattened samples; returns ``(x_kept, voltages)``."""
    x = np.atleast_2d(x)
    kept, v = label_samples(net, [from_vector(net, row) for row in x], target_bus, **solver_opts)
    return np.array([to_vector(net, s) for s in kept]).reshape(-1, x.shape[1]), v
