"""Network-swipe active learning.

A swipe walks the BFS layers around the target bus and, layer by layer,
replaces that layer's injection coordinates with whichever random candidate
block maximizes the GP's predictive standard deviation. The incumbent block is
always among the candidates, so the working sample's deviation never drops.
Only the final sample of each iteration is labelled by the power-flow solver.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gp
from .acpf import box_bounds, check_target, from_vector, sample_matrix, solve_acpf
from .errors import IndexOutOfRange, NonConvergence, SingularJacobian, UnreachableBuses
from .grid import Network, neighborhood
from .kernels import build_vdk, reduce_vdk

log = logging.getLogger(__name__)

MAX_REDRAWS = 5


@dataclass(frozen=True)
class LayerDecomposition:
    """BFS layers around ``target`` and the coordinates each layer introduces.

    ``layers[i]`` holds the buses at hop distance ``i`` from the target.
    ``unique_vars[i]`` holds the flattened coordinates that first appear in
    the NNK supports of ``layers[i]``: for ``i = 0`` those of the target and
    its neighbours, afterwards those of buses at distance ``i + 1``. The last
    entry is therefore always empty.
    """

    target: int
    layers: tuple
    unique_vars: tuple

    @property
    def depth(self) -> int:
        return len(self.layers)

    def to_dict(self):
        return {
            "target": self.target,
            "layers": [sorted(l) for l in self.layers],
            "unique_vars": [list(u) for u in self.unique_vars],
        }


def build_layers(net: Network, target: int) -> LayerDecomposition:
    if not 0 <= target < net.n_bus:
        raise IndexOutOfRange(f"bus index {target} outside [0, {net.n_bus})")
    dist = {target: 0}
    queue = deque([target])
    while queue:
        b = queue.popleft()
        for nb in net.adjacency[b]:
            if nb not in dist:
                dist[nb] = dist[b] + 1
                queue.append(nb)
    if len(dist) != net.n_bus:
        raise UnreachableBuses(f"{net.n_bus - len(dist)} buses unreachable from bus {target}")
    layers = [set() for _ in range(max(dist.values()) + 1)]
    for b, d in dist.items():
        layers[d].add(b)

    coord_of = {b: (2 * k, 2 * k + 1) for k, b in enumerate(net.load_bus_indices)}
    seen = set()
    unique = []
    for layer in layers:
        support = set().union(*(neighborhood(net, b) for b in layer)) - seen
        seen |= support
        unique.append(tuple(sorted(c for b in support if b in coord_of for c in coord_of[b])))
    return LayerDecomposition(target, tuple(frozenset(l) for l in layers), tuple(unique))


def _sigma(model, x):
    return np.sqrt(gp.predict_var(model, np.atleast_2d(x)))


def swipe(model, layers: LayerDecomposition, incumbent, box, batch=100, rng=None, candidate_fn=None):
    """One block-coordinate ascent pass of predictive deviation over ``layers``.

    ``incumbent`` is a flattened coordinate vector and ``box`` a ``(lo, hi)``
    pair of such vectors. ``candidate_fn(coords, lo, hi, batch, rng)`` may
    replace the default uniform candidate draw. Returns the new vector and
    the deviation after each non-empty layer, starting with the incumbent's.
    """
    rng = np.random.default_rng(rng)
    lo, hi = (np.asarray(a, float) for a in box)
    x = np.array(incumbent, dtype=float)
    best = float(_sigma(model, x)[0])
    trace = [best]
    for i, coords in enumerate(layers.unique_vars):
        if not coords:
            log.debug("layer %d introduces no coordinates; skipped", i)
            continue
        idx = np.asarray(coords)
        if candidate_fn is None:
            blocks = rng.uniform(lo[idx], hi[idx], size=(batch, idx.size))
        else:
            blocks = np.atleast_2d(candidate_fn(idx, lo[idx], hi[idx], batch, rng))
        cand = np.repeat(x[None], len(blocks) + 1, axis=0)
        cand[1:, idx] = blocks  # row 0 keeps the incumbent block, so ties favour it
        sig = _sigma(model, cand)
        k = int(np.argmax(sig))
        x = cand[k]
        best = float(sig[k])
        trace.append(best)
    return x, trace


@dataclass
class AlRecord:
    iteration: int
    sample: list
    voltage: float
    sigma: float
    retuned: bool
    wall_time: float
    n_pf_solves: int
    redraws: int = 0
    restarted: bool = False
    mae: float | None = None
    me: float | None = None
    mpv: float | None = None


@dataclass
class AlHistory:
    target: int
    budget: int
    seed: int
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_dict(self):
        return {"target": self.target, "budget": self.budget, "seed": self.seed,
                "records": [asdict(r) for r in self.records]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _label(net, x, target, solver_opts):
    return float(solve_acpf(net, from_vector(net, x), **solver_opts).v_mag[target])


def run_al(net: Network, target: int, budget: int, batch: int = 100, swipes_per_iter: int = 3,
           retune_every: int | None = 1, retune_iters: int = 25, lr: float = 0.1,
           fraction: float = 0.1, seed: int = 0, kernel=None, probe=None, solver_opts=None):
    """Active learning with network swipes; issues exactly ``budget`` successful solves.

    ``kernel`` defaults to the reduced VDK of ``net``. ``retune_every=None``
    (or 0) keeps the initial hyperparameters throughout. Each retune runs
    twice, warm-started and restarted from ``kernel``'s hyperparameters, and
    keeps the higher likelihood: a warm-started chain can settle early, on a
    handful of points, into switched-off NNKs it never leaves. ``probe`` is an
    optional ``(x, v)`` held-out set scored after every update.
    Non-convergent samples are redrawn from a fresh random incumbent; after
    ``MAX_REDRAWS`` consecutive failures the solver error propagates.
    """
    from .bench import metrics  # bench imports al for its AL trials

    if budget < 2:
        raise ValueError("budget must be at least 2")
    check_target(net, target)
    solver_opts = dict(solver_opts or {})
    rng = np.random.default_rng(seed)
    box = box_bounds(net, fraction)
    kernel = kernel if kernel is not None else reduce_vdk(build_vdk(net))
    layers = build_layers(net, target)
    hist = AlHistory(target, budget, int(seed))

    def random_point():
        return sample_matrix(net, fraction, 1, "uniform", rng)[0]

    attempts = 0
    for _ in range(MAX_REDRAWS + 1):
        x0 = random_point()
        attempts += 1
        try:
            v0 = _label(net, x0, target, solver_opts)
            break
        except (NonConvergence, SingularJacobian) as exc:
            log.warning("initial sample failed: %s; redrawing", exc)
            last = exc
    else:
        raise last
    model = gp.assemble(kernel, x0[None], [v0], box=box)
    incumbent = x0

    for it in range(1, budget):
        start = time.perf_counter()
        redraws = 0
        while True:
            x = incumbent
            for _ in range(swipes_per_iter):
                x, trace = swipe(model, layers, x, box, batch, rng)
            attempts += 1
            try:
                v = _label(net, x, target, solver_opts)
                break
            except (NonConvergence, SingularJacobian) as exc:
                if redraws >= MAX_REDRAWS:
                    raise
                redraws += 1
                log.warning("AL iteration %d: sample failed (%s); redrawing", it, exc)
                incumbent = random_point()
        sigma = trace[-1]
        model = gp.update(model, x, v)
        retuned = bool(retune_every) and it % retune_every == 0
        restarted = False
        if retuned:
            warm = gp.retune(model, lr=lr, iters=retune_iters)
            cold = gp.fit(model.x, model.y, kernel, lr=lr, iters=retune_iters, input_map=model.input_map)
            restarted = gp.log_marginal_likelihood(cold) > gp.log_marginal_likelihood(warm)
            model = cold if restarted else warm
        rec = AlRecord(it, x.tolist(), v, sigma, retuned, time.perf_counter() - start, model.n, redraws,
                       restarted)
        if probe is not None:
            mean, var = gp.predict(model, probe[0])
            m = metrics(mean, probe[1], var)
            rec.mae, rec.me, rec.mpv = m["mae"], m["me"], m["mpv"]
        hist.records.append(rec)
        incumbent = x
    log.info("AL finished: %d labels, %d solver calls", model.n, attempts)
    return model, hist
