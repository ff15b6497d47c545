"""Command-line pipeline over semantic-network datasets.

    semrec <command> --config <path> [overrides]

Commands cover the whole flow: validate a dataset (``ingest``), build the
latent model (``build``), cluster it for retrieval (``index``), serve ranked
lists (``recommend``) and pair scores (``predict``), measure holdout quality
(``evaluate``), search relationship weights (``learn-weights``), synthesize
the IPTV benchmark (``generate-iptv``), and render figures (``report``).

All delimited output goes to stdout; logs go to stderr. Exit codes: 0 ok,
1 validation failure, 2 missing artifact, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata as _importlib_metadata

from .aggregate import (RelationshipWeights, build_unified, is_auxiliary,
                        load_weights, save_weights)
from .decompose import (ConvergenceError, KernelSpec, decompose, load_model,
                        save_model)
from .graph import GraphError, SemanticDataset, fmt_real, load_dataset, load_schema
from .index import (DEFAULT_BRANCHING, DEFAULT_CAPACITY, build_index,
                    load_index, query, save_index)
from .iptv import DEFAULT_DENSITIES, GenerationError, IptvGenParams, generate_iptv
from .learn import SearchSpec, evaluate, learn_weights, save_trace, split_holdout
from .manifest import verify_inputs, write_manifest
from .report import load_trace, render_report

log = logging.getLogger("semrec")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_MISSING = 2
EXIT_NO_CONVERGENCE = 3

# accepted metric spellings; the short form is what the flag advertises
METRIC_ALIASES = {"auc": "auc", "p@k": "precision_at_k",
                  "precision_at_k": "precision_at_k", "rmse": "rmse"}


class MissingArtifactError(GraphError):
    """A pipeline stage's input artifact does not exist yet."""


class UsageError(GraphError):
    """Bad command line (argparse would exit 2, which means something else here)."""


# -- configuration -------------------------------------------------------------


_CONFIG_KEYS = {
    "schema", "data", "model", "index", "weights", "trace", "recommendations",
    "report_dir", "k", "tol", "max_iter", "kernel", "reduction",
    "normalization", "branching", "capacity", "budget", "index_types",
    "exclude_seen", "recommend_k", "metric", "target", "holdout_fraction",
    "grid", "passes", "precision_k", "search_modes", "seed", "iptv",
}


@dataclass
class PipelineConfig:
    """Everything a run needs, loaded from one JSON file.

    Relative paths resolve against the config file's own directory, so a
    config travels with its artifacts. The seed has no default on purpose:
    every run must pin one.
    """

    seed: int
    schema: str | None = None
    data: str | None = None
    model: str | None = None
    index: str | None = None
    weights: str | None = None
    trace: str | None = None
    recommendations: str | None = None
    report_dir: str | None = None
    k: int = 32
    tol: float = 1e-8
    max_iter: int | None = None
    kernel: str = "truncated"
    reduction: str = "star"
    normalization: dict[str, str] = field(default_factory=dict)
    branching: int = DEFAULT_BRANCHING
    capacity: int = DEFAULT_CAPACITY
    budget: int | None = None
    index_types: list[str] | None = None
    exclude_seen: bool = True
    recommend_k: int = 10
    metric: str = "auc"
    target: str | None = None
    holdout_fraction: float = 0.2
    grid: list[float] | None = None
    passes: int = 2
    precision_k: int = 10
    search_modes: bool = False
    iptv: dict = field(default_factory=dict)

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise UsageError('config must set "seed"; reproducible runs need one')
        cfg = PipelineConfig(**raw)
        base = os.path.dirname(os.path.abspath(path))
        for name in ("schema", "data", "model", "index", "weights", "trace",
                     "recommendations", "report_dir"):
            value = getattr(cfg, name)
            if value is not None and not os.path.isabs(value):
                setattr(cfg, name, os.path.join(base, value))
        if cfg.reduction not in ("star", "clique"):
            raise UsageError(f"reduction must be star or clique, not {cfg.reduction!r}")
        if cfg.metric not in METRIC_ALIASES:
            raise UsageError(f"metric must be one of {sorted(METRIC_ALIASES)}")
        return cfg


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "reduction", None) is not None:
        cfg.reduction = args.reduction
    if getattr(args, "metric", None) is not None:
        cfg.metric = args.metric
    if getattr(args, "budget", None) is not None:
        cfg.budget = args.budget
    if getattr(args, "exclude_seen", None) is not None:
        cfg.exclude_seen = args.exclude_seen
    return cfg


def _kernel_from(cfg: PipelineConfig, args) -> KernelSpec:
    text = getattr(args, "kernel", None) or cfg.kernel
    alpha = getattr(args, "alpha", None)
    if alpha is not None:
        kind = text.partition(":")[0]
        if kind == "polynomial":
            raise UsageError("polynomial kernel takes coefficients, not --alpha")
        text = f"{kind}:{fmt_real(alpha)}"
    return KernelSpec.parse(text)


def _require(path, what: str, producer: str) -> str:
    if path is None:
        raise UsageError(f'config does not name a {what} path ("{what}")')
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"missing {what}: {path} (produce it with `semrec {producer}`)")
    return path


def _bool_flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_entity(text: str) -> tuple[str, str]:
    etype, sep, eid = text.partition(":")
    if not sep or not etype or not eid:
        raise UsageError(f"entities are written type:id, got {text!r}")
    return etype, eid


# -- shared pipeline pieces ------------------------------------------------


def _load_inputs(cfg: PipelineConfig, force: bool) -> SemanticDataset:
    schema_path = _require(cfg.schema, "schema", "generate-iptv")
    data_path = _require(cfg.data, "data", "generate-iptv")
    verify_inputs(data_path, force=force, log=log)
    schema = load_schema(schema_path)
    return load_dataset(schema, data_path)


def _weights_for(cfg: PipelineConfig, dataset: SemanticDataset,
                 force: bool) -> RelationshipWeights:
    if cfg.weights and os.path.exists(cfg.weights):
        verify_inputs(cfg.weights, force=force, log=log)
        weights = load_weights(cfg.weights, dataset.schema)
        log.info("relationship weights from %s", cfg.weights)
        return weights
    return RelationshipWeights()


def _build_model(dataset: SemanticDataset, cfg: PipelineConfig,
                 kernel: KernelSpec, weights: RelationshipWeights,
                 k: int | None = None):
    unified, norm_params, reduced = build_unified(
        dataset, weights, cfg.normalization, cfg.reduction)
    relations = {r.name: r.endpoints for r in reduced.schema.relation_types}
    return decompose(
        unified, k=k if k is not None else cfg.k, tol=cfg.tol,
        max_iter=cfg.max_iter, seed=cfg.seed, kernel=kernel,
        relations=relations, weights=weights, norm_params=norm_params)


def _print_stats(dataset: SemanticDataset) -> None:
    stats = dataset.stats()
    sys.stdout.write("section\tname\tcount\n")
    for section in ("entities", "edges"):
        for name, count in stats[section].items():
            sys.stdout.write(f"{section}\t{name}\t{count}\n")


def _seen_items(dataset: SemanticDataset, qtype: str, qid: str,
                candidate_types) -> set[tuple[str, str]]:
    """Entities of a candidate type sharing any edge with the query entity.

    Hyperedges count: a three-way edge that contains both the user and a
    program connects them just as a pairwise edge would.
    """
    wanted = set(candidate_types)
    seen: set[tuple[str, str]] = set()
    for rel in dataset.schema.relation_types:
        endpoints = rel.endpoints
        if qtype not in endpoints or not any(t in wanted for t in endpoints):
            continue
        for key, _w, _attrs in dataset.edges(rel.name):
            if not any(t == qtype and eid == qid
                       for t, eid in zip(endpoints, key)):
                continue
            for t, eid in zip(endpoints, key):
                if t in wanted and (t, eid) != (qtype, qid):
                    seen.add((t, eid))
    return seen


# -- commands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    schema_path = _require(cfg.schema, "schema", "generate-iptv")
    data_path = _require(cfg.data, "data", "generate-iptv")
    t0 = time.perf_counter()
    schema = load_schema(schema_path)
    dataset = load_dataset(schema, data_path)
    elapsed = time.perf_counter() - t0
    log.info("validated %s against %s in %.2fs", data_path, schema_path, elapsed)
    if args.out:
        dataset.save(args.out)
        write_manifest(args.out, "ingest",
                       inputs={"schema": schema_path, "data": data_path},
                       seed=cfg.seed, timings={"total": elapsed})
        log.info("canonical copy written to %s", args.out)
    _print_stats(dataset)
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = _load_config(args)
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    kernel = _kernel_from(cfg, args)
    model_path = cfg.model
    if model_path is None:
        raise UsageError('config does not name a model path ("model")')
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    dataset = _load_inputs(cfg, args.force)
    weights = _weights_for(cfg, dataset, args.force)
    timings["load"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    model = _build_model(dataset, cfg, kernel, weights)
    timings["decompose"] = time.perf_counter() - t1

    save_model(model, model_path)
    inputs = {"schema": cfg.schema, "data": cfg.data}
    if cfg.weights and os.path.exists(cfg.weights):
        inputs["weights"] = cfg.weights
    timings["total"] = time.perf_counter() - t0
    write_manifest(model_path, "build", inputs=inputs, seed=cfg.seed,
                   timings=timings,
                   extra={"k": model.k, "kernel": kernel.format(),
                          "reduction": cfg.reduction, "tol": cfg.tol})
    log.info("model with %d eigenpairs over %d entities -> %s",
             model.k, model.n, model_path)
    kernel_values = model.kernel_values()
    sys.stdout.write("rank\teigenvalue\tkernel_value\n")
    for rank, (ev, kv) in enumerate(zip(model.eigenvalues, kernel_values), 1):
        sys.stdout.write(f"{rank}\t{fmt_real(ev)}\t{fmt_real(kv)}\n")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = _load_config(args)
    model_path = _require(cfg.model, "model", "build")
    index_path = cfg.index
    if index_path is None:
        raise UsageError('config does not name an index path ("index")')
    verify_inputs(model_path, force=args.force, log=log)
    t0 = time.perf_counter()
    model = load_model(model_path)
    etypes = cfg.index_types or [t for t in model.sizes if not is_auxiliary(t)]
    index = build_index(model, etypes, branching=cfg.branching,
                        capacity=cfg.capacity, seed=cfg.seed)
    elapsed = time.perf_counter() - t0
    save_index(index, index_path)
    write_manifest(index_path, "index", inputs={"model": model_path},
                   seed=cfg.seed, timings={"total": elapsed},
                   extra={"branching": cfg.branching, "capacity": cfg.capacity,
                          "etypes": list(index.etypes)})
    log.info("indexed %d entities of %s in %.2fs -> %s",
             index.size, list(index.etypes), elapsed, index_path)
    sys.stdout.write("key\tvalue\n")
    sys.stdout.write(f"entities\t{index.size}\n")
    sys.stdout.write(f"leaves\t{len(index.leaves())}\n")
    sys.stdout.write(f"branching\t{index.branching}\n")
    sys.stdout.write(f"capacity\t{index.capacity}\n")
    return EXIT_OK


def cmd_recommend(args) -> int:
    cfg = _load_config(args)
    model_path = _require(cfg.model, "model", "build")
    index_path = _require(cfg.index, "index", "index")
    verify_inputs(model_path, force=args.force, log=log)
    verify_inputs(index_path, force=args.force, log=log)
    model = load_model(model_path)
    index = load_index(index_path, model, require_match=not args.force)
    qtype, qid = _parse_entity(args.entity)
    k = args.k if args.k is not None else cfg.recommend_k

    exclusions: set[tuple[str, str]] = set()
    inputs = {"model": model_path, "index": index_path}
    if cfg.exclude_seen:
        dataset = _load_inputs(cfg, args.force)
        exclusions = _seen_items(dataset, qtype, qid, index.etypes)
        inputs["data"] = cfg.data
        log.info("excluding %d already-connected entities", len(exclusions))

    result = query(index, (qtype, qid), k=k, budget=cfg.budget,
                   exclusions=exclusions, model=model)
    if result.truncated:
        log.warning("only %d candidates exist; list is shorter than k=%d",
                    len(result.entries), k)

    lines = ["rank\tentity_type\tentity_id\tscore"]
    lines += [f"{rank}\t{etype}\t{eid}\t{fmt_real(score)}"
              for rank, (etype, eid, score) in enumerate(result.entries, 1)]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    out = args.out or cfg.recommendations
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        write_manifest(out, "recommend", inputs=inputs, seed=cfg.seed,
                       extra={"entity": args.entity, "k": k,
                              "budget": cfg.budget,
                              "exclude_seen": cfg.exclude_seen,
                              "truncated": result.truncated})
        log.info("recommendations written to %s", out)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    model_path = _require(cfg.model, "model", "build")
    verify_inputs(model_path, force=args.force, log=log)
    model = load_model(model_path)
    a = _parse_entity(args.entity_a)
    b = _parse_entity(args.entity_b)
    score = model.predict(a, b)
    header = "entity_a\tentity_b\tscore"
    row = f"{args.entity_a}\t{args.entity_b}\t{fmt_real(score)}"
    if args.rel:
        denorm = model.predict(a, b, denormalize_rel=args.rel)
        header += f"\t{args.rel}_scale"
        row += f"\t{fmt_real(denorm)}"
    sys.stdout.write(header + "\n" + row + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    target = args.target or cfg.target
    if not target:
        raise UsageError("evaluate needs a target relationship "
                         '(config "target" or --target)')
    kernel = _kernel_from(cfg, args)
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    metric = METRIC_ALIASES[cfg.metric]
    dataset = _load_inputs(cfg, args.force)
    weights = _weights_for(cfg, dataset, args.force)
    t0 = time.perf_counter()
    split = split_holdout(dataset, target, cfg.holdout_fraction, cfg.seed)
    # the scored model is trained on the split, never on the full dataset —
    # a model that has seen the test edges would grade its own homework
    model = _build_model(split.train, cfg, kernel, weights)
    value = evaluate(model, split, metric, precision_k=cfg.precision_k)
    log.info("%s on %d held-out %s edges (of %d) in %.2fs",
             metric, len(split.test_edges), target,
             dataset.edge_count(target), time.perf_counter() - t0)
    sys.stdout.write("key\tvalue\n")
    sys.stdout.write(f"target\t{target}\n")
    sys.stdout.write(f"metric\t{metric}\n")
    sys.stdout.write(f"holdout_fraction\t{fmt_real(cfg.holdout_fraction)}\n")
    sys.stdout.write(f"test_edges\t{len(split.test_edges)}\n")
    sys.stdout.write(f"score\t{fmt_real(value)}\n")
    return EXIT_OK


def cmd_learn_weights(args) -> int:
    cfg = _load_config(args)
    target = args.target or cfg.target
    if not target:
        raise UsageError("learn-weights needs a target relationship "
                         '(config "target" or --target)')
    if cfg.weights is None:
        raise UsageError('config does not name a weights path ("weights")')
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    dataset = _load_inputs(cfg, args.force)
    spec = SearchSpec(
        grid=tuple(cfg.grid) if cfg.grid else SearchSpec.grid,
        metric=METRIC_ALIASES[cfg.metric], passes=cfg.passes, seed=cfg.seed,
        holdout_fraction=cfg.holdout_fraction, k=cfg.k, tol=cfg.tol,
        max_iter=cfg.max_iter, kernel=_kernel_from(cfg, args),
        reduction=cfg.reduction, precision_k=cfg.precision_k,
        search_modes=cfg.search_modes)
    t0 = time.perf_counter()
    result = learn_weights(dataset, target, spec)
    elapsed = time.perf_counter() - t0

    save_weights(result.weights, cfg.weights)
    trace_path = cfg.trace or cfg.weights + ".trace.tsv"
    save_trace(result.trace, trace_path, include_modes=spec.search_modes)
    inputs = {"schema": cfg.schema, "data": cfg.data}
    write_manifest(cfg.weights, "learn-weights", inputs=inputs, seed=cfg.seed,
                   timings={"total": elapsed},
                   extra={"target": target, "metric": spec.metric,
                          "grid": list(spec.grid), "passes": spec.passes,
                          "score": result.score,
                          "modes": result.modes or None,
                          "trace": trace_path})
    write_manifest(trace_path, "learn-weights", inputs=inputs, seed=cfg.seed)
    log.info("%s=%.6g after %d candidate evaluations in %.2fs -> %s",
             spec.metric, result.score, len(result.trace), elapsed, cfg.weights)

    header = "relation\tweight"
    if result.modes:
        header += "\tmode"
    sys.stdout.write(header + "\n")
    for name, value in result.weights.as_dict().items():
        row = f"{name}\t{fmt_real(value)}"
        if result.modes:
            row += f"\t{result.modes.get(name, '')}"
        sys.stdout.write(row + "\n")
    return EXIT_OK


def cmd_generate_iptv(args) -> int:
    cfg = _load_config(args)
    if cfg.schema is None or cfg.data is None:
        raise UsageError('generate-iptv writes the "schema" and "data" paths; '
                         "config must name both")
    raw = dict(cfg.iptv)
    raw.setdefault("seed", cfg.seed)
    try:
        params = IptvGenParams(**raw)
    except TypeError as exc:
        raise UsageError(f"bad iptv parameters: {exc}") from None
    t0 = time.perf_counter()
    dataset = generate_iptv(params)
    elapsed = time.perf_counter() - t0
    dataset.schema.save(cfg.schema)
    dataset.save(cfg.data)
    recorded = {"users": params.users, "programs": params.programs,
                "genres": params.genres, "series": params.series,
                "tags": params.tags, "preference_ratio": params.preference_ratio,
                "densities": {name: params.density(name) for name in DEFAULT_DENSITIES},
                "seed": params.seed}
    write_manifest(cfg.schema, "generate-iptv", seed=params.seed,
                   timings={"total": elapsed}, extra=recorded)
    write_manifest(cfg.data, "generate-iptv",
                   inputs={"schema": cfg.schema}, seed=params.seed,
                   timings={"total": elapsed}, extra=recorded)
    log.info("synthetic dataset: %d users, %d programs, %d genres in %.2fs",
             params.users, params.programs, params.genres, elapsed)
    _print_stats(dataset)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args)
    outdir = cfg.report_dir
    if outdir is None:
        raise UsageError('config does not name a report directory ("report_dir")')
    dataset = model = index = trace = None
    inputs: dict[str, str] = {}
    if cfg.schema and cfg.data and os.path.exists(cfg.schema) and os.path.exists(cfg.data):
        dataset = _load_inputs(cfg, args.force)
        inputs["schema"], inputs["data"] = cfg.schema, cfg.data
    if cfg.model and os.path.exists(cfg.model):
        verify_inputs(cfg.model, force=args.force, log=log)
        model = load_model(cfg.model)
        inputs["model"] = cfg.model
    if model is not None and cfg.index and os.path.exists(cfg.index):
        verify_inputs(cfg.index, force=args.force, log=log)
        index = load_index(cfg.index, model, require_match=not args.force)
        inputs["index"] = cfg.index
    trace_path = cfg.trace or (cfg.weights + ".trace.tsv" if cfg.weights else None)
    if trace_path and os.path.exists(trace_path):
        trace = load_trace(trace_path)
        inputs["trace"] = trace_path

    t0 = time.perf_counter()
    written = render_report(outdir, dataset=dataset, model=model, index=index,
                            trace=trace, recall_k=cfg.recommend_k, seed=cfg.seed)
    listing = os.path.join(outdir, "report_files.tsv")
    with open(listing, "w", encoding="utf-8") as fh:
        fh.write("file\n")
        for path in written:
            fh.write(os.path.relpath(path, outdir) + "\n")
    write_manifest(listing, "report", inputs=inputs, seed=cfg.seed,
                   timings={"total": time.perf_counter() - t0})
    log.info("%d report files in %s", len(written) + 1, outdir)
    sys.stdout.write("artifact\tpath\n")
    for path in written + [listing]:
        sys.stdout.write(f"{os.path.basename(path)}\t{path}\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is taken (missing artifact), so
    # surface usage problems as validation failures instead
    def error(self, message):
        raise UsageError(message)


def _version() -> str:
    try:
        return _importlib_metadata.version("semrec")
    except _importlib_metadata.PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semrec",
                     description="spectral recommender pipeline for typed "
                                 "semantic networks")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", metavar="<command>")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--force", action="store_true",
                       help="run even if recorded input fingerprints are stale")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate a dataset and print its stats")
    p.add_argument("--out", help="also write a canonical copy here")

    p = add("build", cmd_build, "decompose the unified adjacency into a model")
    p.add_argument("--k", type=int, help="number of eigenpairs")
    p.add_argument("--kernel", help="kernel spec, e.g. truncated or exponential:0.5")
    p.add_argument("--alpha", type=float, help="kernel parameter override")
    p.add_argument("--reduction", choices=("star", "clique"),
                   help="hyperedge reduction mode")

    add("index", cmd_index, "cluster the model for budgeted retrieval")

    p = add("recommend", cmd_recommend, "top-k entities for a query entity")
    p.add_argument("--entity", required=True, metavar="TYPE:ID",
                   help="query entity, e.g. user:u42")
    p.add_argument("--k", type=int, help="list length")
    p.add_argument("--budget", type=int, help="max candidates to score")
    p.add_argument("--exclude-seen", type=_bool_flag, metavar="BOOL",
                   help="drop entities already connected to the query entity "
                        "(default true)")
    p.add_argument("--out", help="also write the list to this file")

    p = add("predict", cmd_predict, "score one entity pair")
    p.add_argument("entity_a", metavar="TYPE:ID")
    p.add_argument("entity_b", metavar="TYPE:ID")
    p.add_argument("--rel", help="also report the score on this relationship's "
                                 "original weight scale")

    p = add("evaluate", cmd_evaluate, "holdout quality of the pipeline settings")
    p.add_argument("--target", help="relationship to hold out")
    p.add_argument("--metric", choices=sorted(METRIC_ALIASES),
                   help="auc, p@k, or rmse")
    p.add_argument("--k", type=int, help="number of eigenpairs")
    p.add_argument("--kernel", help="kernel spec override")
    p.add_argument("--alpha", type=float, help="kernel parameter override")
    p.add_argument("--reduction", choices=("star", "clique"))

    p = add("learn-weights", cmd_learn_weights,
            "grid-search relationship weights against a holdout")
    p.add_argument("--target", help="relationship to hold out")
    p.add_argument("--metric", choices=sorted(METRIC_ALIASES))
    p.add_argument("--k", type=int, help="number of eigenpairs")
    p.add_argument("--kernel", help="kernel spec override")
    p.add_argument("--alpha", type=float, help="kernel parameter override")
    p.add_argument("--reduction", choices=("star", "clique"))

    add("generate-iptv", cmd_generate_iptv,
        "synthesize the planted-structure TV benchmark dataset")

    add("report", cmd_report, "render figures and TSVs for existing artifacts")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help(sys.stderr)
            return EXIT_VALIDATION
        return args.func(args)
    except MissingArtifactError as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except ConvergenceError as exc:
        log.error("decomposition did not converge: %s", exc)
        return EXIT_NO_CONVERGENCE
    except (GraphError, GenerationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
