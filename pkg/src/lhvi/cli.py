"""``lhvi`` command line: gen, fit, query, eval, lift-report.

Exit codes: 0 success, 2 invalid configuration, 3 divergence, 4 unknown
variable in a query, 5 oracle preconditions not met. Errors are written to
stderr as one line of JSON; timing goes to the log stream only.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("lhvi")

EXIT_CONFIG, EXIT_DIVERGED, EXIT_UNKNOWN, EXIT_ORACLE = 2, 3, 4, 5


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _fail(code, kind, message):
    raise CLIError(code, kind, message)


def configure_threads(flag: int | None) -> int:
    """LHVI_THREADS beats --threads; both must be set before JAX starts."""
    env = os.environ.get("LHVI_THREADS")
    n = int(env) if env else (1 if flag is None else int(flag))
    if n < 1:
        _fail(EXIT_CONFIG, "InvalidConfig", "thread count must be >= 1")
    if "jax" not in sys.modules:
        flags = os.environ.get("XLA_FLAGS", "")
        if n == 1 and "multi_thread_eigen" not in flags:
            os.environ["XLA_FLAGS"] = (flags + " --xla_cpu_multi_thread_eigen=false"
                                       " intra_op_parallelism_threads=1").strip()
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return n


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")


def _dump(obj) -> str:
    def enc(v):
        if isinstance(v, float) and v != v:
            return "nan"
        return "inf" if v == float("inf") else "-inf" if v == float("-inf") else str(v)
    return json.dumps(obj, indent=1, sort_keys=True, default=enc)


def _load_graph(path):
    from .graph import loads_graph

    try:
        return loads_graph(Path(path).read_text())
    except (OSError, ValueError, KeyError, TypeError) as e:
        _fail(EXIT_CONFIG, "InvalidModel", f"{path}: {e}")


def _load_evidence(path, graph):
    from .errors import UnknownVariable
    from .graph import evidence_from_json, validate_evidence

    if not path:
        return {}
    try:
        ev = evidence_from_json(json.loads(Path(path).read_text()), graph)
        validate_evidence(graph, ev)
        return ev
    except UnknownVariable as e:
        _fail(EXIT_CONFIG, "UnknownVariable", f"evidence names unknown variable {e}")
    except (OSError, ValueError) as e:
        _fail(EXIT_CONFIG, "InvalidEvidence", f"{path}: {e}")


# --------------------------------------------------------------------------
# Commands


def cmd_gen(args):
    from .graph import evidence_to_json
    from .models import GeneratorConfig, generate

    sizes = {k: getattr(args, k) for k in ("nA", "nB", "nBox", "nPapers", "nTopics", "nMarkets", "nBanks",
                                            "nWells", "nSteps") if getattr(args, k) is not None}
    try:
        cfg = GeneratorConfig(args.family, sizes, args.evidence_fraction, args.seed, args.structure)
        graph, evidence = generate(cfg)
    except ValueError as e:
        _fail(EXIT_CONFIG, "InvalidConfig", str(e))
    out = Path(args.out)
    doc = graph.to_json()
    doc["meta"] = {"family": args.family, "sizes": sizes, "seed": args.seed, "structure": args.structure}
    _write(out / "model.json", _dump(doc))
    _write(out / "evidence.json", _dump(evidence_to_json(evidence)))
    print(_dump({"variables": len(graph.variables), "factors": len(graph.factors),
                 "discrete": sum(v.is_discrete for v in graph.variables), "evidence": len(evidence)}))
    return 0


def _fit_config(args):
    from .fit import FitConfig
    from .optimizer import OptimConfig

    try:
        optim = OptimConfig(max_iters=args.max_iters, grad_tol=args.grad_tol, obj_tol=args.obj_tol,
                            lr=args.lr, seed=args.seed)
        return FitConfig(entropy=args.objective, mode=args.mode, K=args.K, order=args.order, seed=args.seed,
                         n_starts=args.n_starts, optim=optim, iters_per_stage=args.iters_per_stage,
                         threshold=args.threshold)
    except (ValueError, TypeError) as e:
        _fail(EXIT_CONFIG, "InvalidConfig", str(e))


def cmd_fit(args):
    import time

    from .errors import DivergenceDetected, NonFiniteGradient
    from .fit import dumps_fit, fit

    graph = _load_graph(args.model)
    evidence = _load_evidence(args.evidence, graph)
    cfg = _fit_config(args)
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        res = fit(graph, evidence, cfg)
    except (DivergenceDetected, NonFiniteGradient) as e:
        trace = getattr(e, "trace", None)
        if trace is not None:
            _write(out / "trace.csv", trace.to_csv())
        _fail(EXIT_DIVERGED, type(e).__name__, str(e))
    log.info("fit finished in %.3f s (%d iterations)", time.perf_counter() - t0, len(res.trace))
    doc = json.loads(dumps_fit(res))
    doc["inputs"] = {"model": str(args.model), "evidence": str(args.evidence) if args.evidence else None}
    _write(out / "fitted.json", _dump(doc))
    _write(out / "trace.csv", res.trace.to_csv())
    _write(out / "lift_report.json", _dump(res.report()))
    print(_dump({"objective": res.objective_value, "iterations": len(res.trace), "n_params": res.n_params,
                 "stop_reason": res.reason}))
    return 0


def _load_fitted(args):
    """Returns (fitted doc, conditioned graph, q keyed by graph ids)."""
    from .fit import q_from_json
    from .graph import condition

    path = Path(args.fitted)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        _fail(EXIT_CONFIG, "InvalidFitted", f"{path}: {e}")
    inputs = doc.get("inputs", {})
    model = args.model or inputs.get("model")
    if model is None:
        _fail(EXIT_CONFIG, "InvalidConfig", "no model given and none recorded in the fitted file")
    graph = _load_graph(model)
    ev_path = args.evidence or inputs.get("evidence")
    evidence = _load_evidence(ev_path, graph)
    g = condition(graph, evidence)
    q = q_from_json(doc["q"], g)
    if set(q.marginals) != set(g.variable_ids):
        _fail(EXIT_CONFIG, "InvalidFitted", "fitted parameters do not match the conditioned model")
    return doc, g, q


def _resolve(names, q):
    by_str = {str(k): k for k in q.marginals}
    out = []
    for n in names:
        if n not in by_str:
            _fail(EXIT_UNKNOWN, "UnknownVariable", f"unknown or observed variable {n!r}")
        out.append(by_str[n])
    return out


def _split_names(s):
    return [x for x in s.split(",") if x] if s else []


def cmd_query(args):
    import numpy as np

    from .inference import QueryResult, energy_of_assignment, map_estimate, marginal_curve, query_marginal

    doc, g, q = _load_fitted(args)
    res = QueryResult(diagnostics={"objective": doc.get("objective"), "iterations": doc.get("iterations")})
    for vid in _resolve(_split_names(args.marginal), q):
        res.marginals[vid] = query_marginal(q, [vid])
    if args.map is not None:
        names = list(q.marginals) if args.map in ("", "all") else _resolve(_split_names(args.map), q)
        x = map_estimate(q, names, domains=g)
        res.map_assignment = x
        if set(x) == set(g.variable_ids):
            res.map_energy = energy_of_assignment(g, x)
    if args.curve:
        (vid,) = _resolve([args.curve], q)
        rows = marginal_curve(query_marginal(q, [vid]).univariate(vid))
        path = Path(args.curve_out or f"curve_{args.curve}.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, rows, delimiter=",", header="x,density", comments="", fmt="%.17g")
    text = _dump(res.to_json())
    if args.out:
        _write(Path(args.out), text)
    print(text)
    return 0


def cmd_eval(args):
    from .errors import NonIntegrable, NotGaussian, NotPositiveDefinite, TooLarge
    from .inference import avg_l1_error, avg_univariate_kl, energy_of_assignment, map_estimate
    from .oracles import GridSpec, brute_force_hybrid, gaussian_exact

    doc, g, q = _load_fitted(args)
    try:
        if args.oracle == "gaussian":
            truth = gaussian_exact(g)
            exact, ref_means, log_z = truth.marginals(), truth.means(), truth.log_z
        else:
            truth = brute_force_hybrid(g, GridSpec(points=args.grid_points, bound=args.grid_bound))
            exact, ref_means, log_z = truth.marginals, truth.means(), truth.log_z
    except (NotGaussian, NotPositiveDefinite, TooLarge, NonIntegrable) as e:
        _fail(EXIT_ORACLE, type(e).__name__, str(e))
    x = map_estimate(q, domains=g)
    disc = [v.id for v in g.variables if v.is_discrete]
    ref = {k: (exact[k].mode if k in disc else ref_means[k]) for k in ref_means}
    metrics = {
        "oracle": args.oracle,
        "avg_kl": avg_univariate_kl(exact, q),
        "avg_l1": avg_l1_error(ref, {k: x[k] for k in ref}, discrete=disc),
        "map_energy": energy_of_assignment(g, x),
        "log_z": log_z,
        "objective": doc.get("objective"),
        "n_variables": len(g.variables),
    }
    out = Path(args.out) if args.out else Path(args.fitted).parent / "metrics.json"
    _write(out, _dump(metrics))
    print(_dump(metrics))
    return 0


def cmd_lift_report(args):
    from .graph import condition
    from .lifting import lift

    graph = _load_graph(args.model)
    evidence = _load_evidence(args.evidence, graph)
    rep = lift(condition(graph, evidence)).report()
    text = _dump(rep)
    if args.out:
        _write(Path(args.out) / "lift_report.json", text)
    print(text)
    return 0


# --------------------------------------------------------------------------
# Parser


def _global_options(p, default):
    p.add_argument("--config", default=default, help="JSON file of flag values; explicit flags take precedence")
    p.add_argument("--threads", type=int, default=default)
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lhvi", description="Lifted hybrid variational inference.")
    _global_options(p, argparse.SUPPRESS)
    p.set_defaults(config=None, threads=1, verbose=False)
    # the same options are accepted after the subcommand too
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    g = sub.add_parser("gen", help="generate a benchmark model and evidence")
    g.add_argument("--family", required=True, choices=["toy-hmln", "paper-popularity", "rgm", "rkf"])
    for name in ("nA", "nB", "nBox", "nPapers", "nTopics", "nMarkets", "nBanks", "nWells", "nSteps"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--structure", choices=["tree", "cycle"], default="tree")
    g.add_argument("--evidence-fraction", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="optimize the free energy")
    f.add_argument("--model", required=True)
    f.add_argument("--evidence")
    f.add_argument("--objective", choices=["bethe", "jensen"], default="bethe")
    f.add_argument("--mode", choices=["ground", "lifted", "c2f"], default="ground")
    f.add_argument("--K", type=int, default=1)
    f.add_argument("--order", type=int, default=8)
    f.add_argument("--lr", type=float, default=0.2)
    f.add_argument("--max-iters", type=int, default=2000)
    f.add_argument("--grad-tol", type=float, default=1e-5)
    f.add_argument("--obj-tol", type=float, default=1e-8)
    f.add_argument("--n-starts", type=int, default=1)
    f.add_argument("--iters-per-stage", type=int, default=50)
    f.add_argument("--threshold", type=float, help="C2F split threshold (default 0.05 * range^2)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_fit)

    for name, func, help_ in (("query", cmd_query, "marginal / MAP queries"),
                              ("eval", cmd_eval, "compare against an exact oracle")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--fitted", required=True)
        s.add_argument("--model")
        s.add_argument("--evidence")
        s.add_argument("--out")
        s.set_defaults(func=func)
    q = sub.choices["query"]
    q.add_argument("--marginal", help="comma-separated variable ids")
    q.add_argument("--map", nargs="?", const="all", help="comma-separated ids, or none for all")
    q.add_argument("--curve", help="dump the marginal density of one variable as CSV")
    q.add_argument("--curve-out")
    e = sub.choices["eval"]
    e.add_argument("--oracle", choices=["gaussian", "brute-force"], default="gaussian")
    e.add_argument("--grid-points", type=int, default=2001)
    e.add_argument("--grid-bound", type=float, default=30.0)

    r = sub.add_parser("lift-report", help="color passing compression summary")
    r.add_argument("--model", required=True)
    r.add_argument("--evidence")
    r.add_argument("--out")
    r.set_defaults(func=cmd_lift_report)
    return p


def _error_line(kind, message) -> str:
    return json.dumps({"error": kind, "message": message})


def parse_args(argv):
    """Parse flags; values from ``--config`` replace defaults, flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            _fail(EXIT_CONFIG, "InvalidConfig", f"{args.config}: {e}")
        if not isinstance(cfg, dict):
            _fail(EXIT_CONFIG, "InvalidConfig", "config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions} | {a.dest for a in parser._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known
        if unknown:
            _fail(EXIT_CONFIG, "InvalidConfig", f"unknown config keys {sorted(unknown)}")
        sub.set_defaults(**cfg)
        parser.set_defaults(**{k: v for k, v in cfg.items() if k in ("threads", "verbose")})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        try:
            args = parse_args(argv)
        except SystemExit as e:
            if e.code not in (0, None):
                sys.stderr.write(_error_line("InvalidConfig", "could not parse arguments") + "\n")
            return int(e.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        configure_threads(args.threads)
        return args.func(args)
    except CLIError as e:
        sys.stderr.write(_error_line(e.kind, str(e)) + "\n")
        return e.code


if __name__ == "__main__":
    sys.exit(main())
