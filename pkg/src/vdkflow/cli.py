"""``vdkflow`` command-line interface.

Bus arguments (``--target``) are external bus ids as written in the case file.
Results go to ``--out`` or stdout as JSON (CSV for ``bench trials``). A
``--config`` JSON file supplies defaults for the chosen subcommand's options;
explicit flags win. Failures print ``{"error": ..., "message": ...}`` to
stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import acpf, bench, gp
from .al import build_layers, run_al
from .errors import VdkflowError
from .grid import load_case


def _emit(obj, out):
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


def _load_xy(path):
    d = _read_json(path)
    x = np.asarray(d["x"], float)
    return x, (np.asarray(d["v"], float) if "v" in d else None)


# -- handlers -----------------------------------------------------------------


def cmd_grid_dump(a):
    _emit(load_case(a.case).to_dict(), a.out)


def cmd_acpf_solve(a):
    net = load_case(a.case)
    if a.samples:
        x, _ = _load_xy(a.samples)
        samples = [acpf.from_vector(net, row) for row in x]
    else:
        samples = [acpf.base_sample(net, a.scale)]
    sols = []
    for s in samples:
        sol = acpf.solve_acpf(net, s, tol=a.tol, max_iter=a.max_iter, enforce_q_limits=a.q_limits)
        sols.append({"v_mag": sol.v_mag.tolist(), "v_ang": sol.v_ang.tolist(),
                     "iterations": sol.iterations, "max_mismatch": sol.max_mismatch})
    _emit({"case": a.case, "bus_ids": [b.id for b in net.buses], "solutions": sols}, a.out)


def cmd_acpf_sample(a):
    net = load_case(a.case)
    x = acpf.sample_matrix(net, a.fraction, a.n, a.dist, a.seed)
    out = {"case": a.case, "fraction": a.fraction, "distribution": a.dist, "seed": a.seed,
           "load_bus_ids": [net.buses[i].id for i in net.load_bus_indices], "x": x.tolist()}
    if a.target is not None:
        x, v = acpf.label_matrix(net, x, net.bus_index(a.target))
        out.update(x=x.tolist(), v=v.tolist(), target=a.target)
    _emit(out, a.out)


def cmd_kernel_build(a):
    net = load_case(a.case)
    target = net.bus_index(a.target) if a.target is not None else None
    _emit(bench.make_kernel(net, a.variant, target, a.depth).to_dict(), a.out)


def cmd_gp_fit(a):
    net = load_case(a.case)
    target = net.bus_index(a.target)
    if a.data:
        x, v = _load_xy(a.data)
        if v is None:
            raise ValueError("training data file lacks labels 'v'")
    else:
        x, v = bench.labelled_set(net, target, a.fraction, a.n_train, a.seed)
    kern = bench.make_kernel(net, a.variant, target, a.depth)
    model = gp.fit(x, v, kern, box=acpf.box_bounds(net, a.fraction), lr=a.lr, iters=a.iters)
    d = model.to_dict()
    d["lml"] = gp.log_marginal_likelihood(model)
    _emit(d, a.out)


def cmd_gp_predict(a):
    model = gp.GpModel.from_dict(_read_json(a.model))
    x, v = _load_xy(a.data)
    mean, var = gp.predict(model, x)
    out = {"mean": mean.tolist(), "var": var.tolist()}
    if v is not None:
        out["metrics"] = bench.metrics(mean, v, var)
    _emit(out, a.out)


def cmd_al_run(a):
    net = load_case(a.case)
    target = net.bus_index(a.target)
    model, hist = run_al(net, target, a.budget, batch=a.batch, swipes_per_iter=a.swipes,
                         retune_every=0 if a.no_retune else a.retune_every, fraction=a.fraction,
                         seed=a.seed)
    out = hist.to_dict()
    out["target_id"] = a.target
    out["model"] = model.to_dict()
    _emit(out, a.out)


def cmd_bench_trials(a):
    cfg = bench.ExperimentConfig.from_dict(a.experiment) if a.experiment else bench.ExperimentConfig()
    if a.seed is not None:
        cfg.seed = a.seed
    if a.out:
        bench.run_trials(cfg, a.out)
    else:
        results = bench.run_trials(cfg)
        sys.stdout.write(",".join(bench.CSV_COLUMNS) + "\n")
        for r in results:
            sys.stdout.write(",".join(str(c) for c in r.row()) + "\n")


def _train(a, net, target):
    train = bench.labelled_set(net, target, a.fraction, a.n_train, [a.seed, 0])
    return train, bench.labelled_set(net, target, a.fraction, a.n_test, [a.seed, 1])


def cmd_bench_depth(a):
    net = load_case(a.case)
    target = net.bus_index(a.target)
    depths = a.depths or list(range(1, build_layers(net, target).depth + 1))
    train, test = _train(a, net, target)
    rows = bench.depth_study(net, target, depths, train, test, iters=a.iters,
                             box=acpf.box_bounds(net, a.fraction))
    _emit({"case": a.case, "target": a.target, "rows": rows}, a.out)


def cmd_bench_uq(a):
    net = load_case(a.case)
    target = net.bus_index(a.target)
    train, _ = _train(a, net, target)
    model = gp.fit(*train, bench.make_kernel(net, "vdk_reduced"), box=acpf.box_bounds(net, a.fraction),
                   iters=a.iters)
    res = bench.uq_study(model, net, target, a.dists, a.n_test, a.fraction, [a.seed, 2])
    _emit({"case": a.case, "target": a.target, "results": res}, a.out)


def cmd_bench_extrapolate(a):
    net = load_case(a.case)
    target = net.bus_index(a.target)
    train, _ = _train(a, net, target)
    model = gp.fit(*train, bench.make_kernel(net, "vdk_reduced"), box=acpf.box_bounds(net, a.fraction),
                   iters=a.iters)
    rows = bench.extrapolation_study(model, net, target, a.test_fractions, a.n_test, [a.seed, 3])
    _emit({"case": a.case, "target": a.target, "train_fraction": a.fraction, "rows": rows}, a.out)


# -- parser -------------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file (default stdout)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="vdkflow", parents=[common],
                                     description="Graph-structured GP learning of power-flow voltages.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    groups = parser.add_subparsers(dest="group", required=True)

    def leaf(group, name, func, help_):
        p = group.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    def case_arg(p, target=False):
        p.add_argument("--case", default="case118", help="case file or bundled name")
        if target:
            p.add_argument("--target", type=int, default=2, help="external bus id")

    g = groups.add_parser("grid").add_subparsers(dest="cmd", required=True)
    case_arg(leaf(g, "dump", cmd_grid_dump, "parsed network as JSON"))

    g = groups.add_parser("acpf").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "solve", cmd_acpf_solve, "solve the power flow")
    case_arg(p)
    p.add_argument("--samples", help="JSON with flattened samples under 'x' (default: base load)")
    p.add_argument("--scale", type=float, default=1.0, help="base-load multiplier")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--q-limits", action="store_true", help="switch PV buses at reactive limits")
    p = leaf(g, "sample", cmd_acpf_sample, "draw (and optionally label) hypercube samples")
    case_arg(p)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--dist", choices=acpf.DISTRIBUTIONS, default="uniform")
    p.add_argument("--target", type=int, help="label with this bus's voltage magnitude")

    g = groups.add_parser("kernel").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "build", cmd_kernel_build, "kernel structure as JSON")
    case_arg(p)
    p.add_argument("--variant", choices=bench.KERNEL_VARIANTS, default="vdk_reduced")
    p.add_argument("--target", type=int, help="external bus id (for vdk_depth)")
    p.add_argument("--depth", type=int)

    g = groups.add_parser("gp").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "fit", cmd_gp_fit, "fit a GP and write the model")
    case_arg(p, target=True)
    p.add_argument("--data", help="JSON with 'x' and 'v' (default: draw and label)")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--variant", choices=bench.KERNEL_VARIANTS, default="vdk_reduced")
    p.add_argument("--depth", type=int)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=200)
    p = leaf(g, "predict", cmd_gp_predict, "predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="JSON with 'x' (and optional 'v')")

    g = groups.add_parser("al").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "run", cmd_al_run, "network-swipe active learning")
    case_arg(p, target=True)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--swipes", type=int, default=3)
    p.add_argument("--retune-every", type=int, default=1)
    p.add_argument("--no-retune", action="store_true")
    p.add_argument("--fraction", type=float, default=0.1)

    g = groups.add_parser("bench").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "trials", cmd_bench_trials, "random train/test trials to CSV")
    p.add_argument("--experiment", type=json.loads, help="inline JSON experiment config")
    for name, func, help_ in (("depth", cmd_bench_depth, "MAE per truncation depth"),
                              ("uq", cmd_bench_uq, "KL divergence under shifted injections"),
                              ("extrapolate", cmd_bench_extrapolate, "MAE on wider boxes")):
        p = leaf(g, name, func, help_)
        case_arg(p, target=True)
        p.add_argument("--fraction", type=float, default=0.1)
        p.add_argument("--n-train", type=int, default=100)
        p.add_argument("--n-test", type=int, default=1000)
        p.add_argument("--iters", type=int, default=200)
        if name == "depth":
            p.add_argument("--depths", type=int, nargs="+")
        elif name == "uq":
            p.add_argument("--dists", nargs="+", choices=acpf.DISTRIBUTIONS, default=["normal", "beta"])
        else:
            p.add_argument("--test-fractions", type=float, nargs="+", default=[0.1, 0.15, 0.2, 0.25])
    return parser


def _leaf_parser(parser, argv):
    """The subparser that will handle ``argv`` (for applying config defaults)."""
    p = parser
    for tok in argv:
        sub = next((a for a in p._actions if isinstance(a, argparse._SubParsersAction)), None)
        if sub is None:
            break
        if tok in sub.choices:
            p = sub.choices[tok]
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre, _ = _common().parse_known_args(argv)
    config = _read_json(pre.config) if getattr(pre, "config", None) else {}
    if config:
        leaf_p = _leaf_parser(parser, argv)
        if leaf_p.get_default("func") is cmd_bench_trials:
            leaf_p.set_defaults(experiment=config)
        else:
            dests = {a.dest for a in leaf_p._actions}
            unknown = {k for k in config if k.replace("-", "_") not in dests}
            if unknown:
                parser.error(f"unknown config keys: {sorted(unknown)}")
            leaf_p.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
    args = parser.parse_args(argv)
    for name, default in (("seed", None), ("out", None), ("config", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.seed is None and args.func is not cmd_bench_trials:
        args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (VdkflowError, ValueError, OSError, KeyError) as exc:
        err = exc.to_dict() if isinstance(exc, VdkflowError) else {"error": type(exc).__name__,
                                                                    "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
