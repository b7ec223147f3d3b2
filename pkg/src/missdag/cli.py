"""Command-line front end.

Subcommands: discover, evaluate, dsep, ampute, simulate, export-dot.
Exit codes: 0 success, 1 runtime/computation error, 2 usage/config error.
Every command is a pure function of (input files, flags, seed).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import ecdemo
from .data import AmputationSpec, ampute, read_csv, write_csv
from .discovery import (
    ALGORITHMS,
    KnowledgeBase,
    bootstrap_sem,
    evaluate,
    hc_aipw,
    hill_climb,
)
from .errors import MissDagError
from .estimation import BicScorer, ParameterSet, fit_mle
from .data import forward_sample, impute_mode
from .graphs import (
    Dag,
    d_separated,
    export_dot,
    find_active_path,
    graph_from_json,
    graph_to_json,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    pass


def _diag(message: str, json_logs: bool) -> None:
    if json_logs:
        sys.stderr.write(json.dumps({"level": "error", "message": message}) + "\n")
    else:
        sys.stderr.write(f"error: {message}\n")


def _resolve_seed(args, config=None):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    if config is not None and "seed" in config:
        return int(config["seed"])
    env = os.environ.get("MGD_SEED")
    if env is not None:
        return int(env)
    raise ConfigError("no seed given (flag --seed, config field 'seed', or MGD_SEED)")


def _load_config(path) -> dict:
    if path is None:
        raise ConfigError("missing required flag --config")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _load_dataset(config: dict, seed: int):
    ref = config.get("dataset")
    if ref is None:
        raise ConfigError("config field 'dataset' is required")
    if ref == "ec-demo":
        n = int(config.get("dataset_n", 763))
        d = ecdemo.ec_demo_dataset(n, seed)
    else:
        p = Path(ref)
        if not p.exists():
            raise ConfigError(f"config field 'dataset': file not found: {p}")
        d = read_csv(p)
    spec_path = config.get("ampute_spec")
    if spec_path:
        p = Path(spec_path)
        if not p.exists():
            raise ConfigError(f"config field 'ampute_spec': file not found: {p}")
        spec = AmputationSpec.from_json(p.read_text(encoding="utf-8"))
        _check_spec_columns(spec, d)
        d = ampute(d, spec)
    return d


def _load_knowledge(config: dict) -> KnowledgeBase:
    path = config.get("knowledge")
    if not path:
        return KnowledgeBase()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config field 'knowledge': file not found: {p}")
    return KnowledgeBase.from_json(p.read_text(encoding="utf-8"))


def _check_spec_columns(spec: AmputationSpec, d) -> None:
    for e in spec.entries:
        for name in (e.target,) + e.drivers:
            if name not in d.names:
                raise ConfigError(f"amputation spec references unknown column {name!r}")


def _out_dir(args, config: dict) -> Path:
    out = getattr(args, "out", None) or config.get("out")
    if out is None:
        raise ConfigError("no output directory (flag --out or config field 'out')")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _options(config: dict) -> dict:
    opts = {}
    for key in ("alpha", "max_parents", "max_iter", "refit_pseudocount",
                "score_pseudocount", "sem_max_outer", "em_max_iter", "em_tol"):
        if key in config:
            opts[key] = config[key]
    return opts


def cmd_discover(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    algorithm = config.get("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"config field 'algorithm' must be one of {ALGORITHMS}")
    d = _load_dataset(config, seed)
    kb = _load_knowledge(config)
    out = _out_dir(args, config)
    opts = _options(config)
    threads = args.threads or 1
    trace_doc = {"algorithm": algorithm, "seed": seed}
    summary_doc = None
    if algorithm == "hc-complete":
        dc = impute_mode(d)
        scorer = BicScorer(dc.schema, dc.rows,
                           pseudocount=opts.get("score_pseudocount", 0.0))
        init = Dag(dc.names, sorted(kb.required))
        g, trace = hill_climb(scorer, kb, init,
                              max_iter=opts.get("max_iter", 500),
                              max_parents=opts.get("max_parents", 4))
        trace_doc.update(_trace_to_doc(trace))
    elif algorithm == "hc-aipw":
        g, trace, report = hc_aipw(d, kb, alpha=opts.get("alpha", 0.01),
                                   pseudocount=opts.get("score_pseudocount", 0.0),
                                   max_iter=opts.get("max_iter", 500),
                                   max_parents=opts.get("max_parents", 4))
        trace_doc.update(_trace_to_doc(trace))
        trace_doc["indicator_report"] = report
    else:  # bootstrap-sem
        g, summary = bootstrap_sem(
            d, kb, B=int(config.get("B", 100)),
            threshold=float(config.get("threshold", 0.5)),
            seed=seed,
            held_out_fraction=float(config.get("held_out_fraction", 0.2)),
            threads=threads,
            max_outer=opts.get("sem_max_outer", 5),
            em_max_iter=opts.get("em_max_iter", 30),
            em_tol=opts.get("em_tol", 1e-3),
            max_parents=opts.get("max_parents", 4),
            max_iter=opts.get("max_iter", 500),
            pseudocount=opts.get("refit_pseudocount", 1.0))
        in_mean, in_sd = summary.in_sample_mean_sd
        out_mean, out_sd = summary.out_of_sample_mean_sd
        summary_doc = {
            "B": summary.replicates,
            "edge_frequency": {f"{p}->{c}": f
                               for (p, c), f in sorted(summary.edge_frequency.items())},
            "in_sample": [s.log_likelihood for s in summary.in_sample],
            "out_of_sample": [s.log_likelihood for s in summary.out_of_sample],
            "in_sample_mean": in_mean, "in_sample_sd": in_sd,
            "out_of_sample_mean": out_mean, "out_of_sample_sd": out_sd,
        }
        trace_doc["edges"] = sorted([list(e) for e in g.edges])
    _write(out / "graph.json", graph_to_json(g))
    _write(out / "graph.dot", export_dot(g, roles=ecdemo.EC_ROLES
                                         if set(g.vertices) >= set(ecdemo.EC_ROLES) else None))
    _write(out / "trace.json", json.dumps(trace_doc, indent=2, sort_keys=True) + "\n")
    if summary_doc is not None:
        _write(out / "summary.json", json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _trace_to_doc(trace) -> dict:
    return {
        "moves": [[op, list(edge), delta] for op, edge, delta in trace.moves],
        "initial_score": trace.initial_score,
        "final_score": trace.final_score,
        "iterations": trace.iterations,
    }


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    algorithms = config.get("algorithms")
    if not algorithms:
        raise ConfigError("config field 'algorithms' must list at least one algorithm")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
    d = _load_dataset(config, seed)
    kb = _load_knowledge(config)
    out = _out_dir(args, config)
    report = evaluate(algorithms, d, kb,
                      B=int(config.get("B", 100)),
                      held_out_fraction=float(config.get("held_out_fraction", 0.2)),
                      seed=seed, threads=args.threads or 1,
                      **_options(config))
    _write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "replicate", "ll_in", "ll_out",
                         "ll_in_rescaled", "ll_out_rescaled"])
        for row in report["replicates"]:
            writer.writerow([row["algorithm"], row["replicate"],
                             repr(row["ll_in"]), repr(row["ll_out"]),
                             repr(row["ll_in_rescaled"]), repr(row["ll_out_rescaled"])])
    return EXIT_OK


def _load_graph(ref: str) -> Dag:
    if ref in ecdemo.BUILTIN_GRAPHS:
        return ecdemo.BUILTIN_GRAPHS[ref]()
    p = Path(ref)
    if not p.exists():
        raise ConfigError(f"graph file not found: {p}")
    text = p.read_text(encoding="utf-8")
    g, _ = graph_from_json(text)
    return g


def _parse_dsep_query(query: str):
    if "_||_" not in query:
        raise ConfigError("query must contain '_||_'")
    lhs, rest = query.split("_||_", 1)
    if "|" in rest:
        mid, cond = rest.split("|", 1)
    else:
        mid, cond = rest, ""

    def names(chunk):
        return [t.strip() for t in chunk.split(",") if t.strip()]

    x, y, z = names(lhs), names(mid), names(cond)
    if not x or not y:
        raise ConfigError("query needs nonempty sets on both sides of '_||_'")
    return x, y, z


def cmd_dsep(args) -> int:
    g = _load_graph(args.graph)
    x, y, z = _parse_dsep_query(args.query)
    for v in x + y + z:
        if v not in g.vertices:
            raise ConfigError(f"unknown vertex {v!r}")
    if d_separated(g, x, y, z):
        print("d-separated")
    else:
        path = find_active_path(g, x, y, z)
        print("d-connected (active path: " + " - ".join(path) + ")")
    return EXIT_OK


def cmd_ampute(args) -> int:
    data_path = Path(args.data)
    if not data_path.exists():
        raise ConfigError(f"dataset file not found: {data_path}")
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"amputation spec not found: {spec_path}")
    d = read_csv(data_path)
    spec = AmputationSpec.from_json(spec_path.read_text(encoding="utf-8"))
    _check_spec_columns(spec, d)
    write_csv(ampute(d, spec), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    n = int(args.n)
    if n < 0:
        raise ConfigError("n must be >= 0")
    seed = _resolve_seed(args)
    if args.model == "ec-demo":
        g, params = ecdemo.ec_ground_truth()
    else:
        if not args.params:
            raise ConfigError("--params is required unless model is 'ec-demo'")
        g = _load_graph(args.model)
        p = Path(args.params)
        if not p.exists():
            raise ConfigError(f"parameter file not found: {p}")
        params = ParameterSet.from_json(p.read_text(encoding="utf-8"))
    d = forward_sample(g, params, n, seed)
    write_csv(d, args.out)
    return EXIT_OK


def cmd_export_dot(args) -> int:
    g = _load_graph(args.graph)
    roles = ecdemo.EC_ROLES if set(g.vertices) >= set(ecdemo.EC_ROLES) else None
    text = export_dot(g, roles=roles)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="missdag",
        description="Causal discovery for categorical data with missing values")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=os.cpu_count())
        p.add_argument("--json-logs", action="store_true")

    p = sub.add_parser("discover", help="run one discovery algorithm")
    p.add_argument("--config", required=False)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("evaluate", help="in/out-of-sample LL benchmark")
    p.add_argument("--config", required=False)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dsep", help="d-separation query on a graph file")
    p.add_argument("graph", help="graph.json path or builtin (ec-mnar, ec-mar)")
    p.add_argument("query", help="e.g. 'LNM _||_ Radiotherapy |'")
    p.add_argument("--json-logs", action="store_true")
    p.set_defaults(func=cmd_dsep)

    p = sub.add_parser("ampute", help="inject missing values into a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json-logs", action="store_true")
    p.set_defaults(func=cmd_ampute)

    p = sub.add_parser("simulate", help="forward-sample a model to CSV")
    p.add_argument("model", help="'ec-demo' or a graph.json path")
    p.add_argument("--params", default=None, help="ParameterSet JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-dot", help="graph.json to DOT text")
    p.add_argument("graph")
    p.add_argument("--out", default=None)
    p.add_argument("--json-logs", action="store_true")
    p.set_defaults(func=cmd_export_dot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    json_logs = getattr(args, "json_logs", False)
    try:
        return args.func(args)
    except ConfigError as exc:
        _diag(str(exc), json_logs)
        return EXIT_USAGE
    except MissDagError as exc:
        _diag(f"{type(exc).__name__}: {exc}", json_logs)
        return EXIT_RUNTIME
    except OSError as exc:
        _diag(str(exc), json_logs)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
