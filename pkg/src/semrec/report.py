"""Report rendering: figures plus TSV companions for pipeline artifacts.

Every renderer writes into an output directory and returns the list of file
paths it produced, so the caller can manifest them. Figures are PNG; each one
is paired with the delimited data behind it where the data is not already an
artifact of its own.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import plotting
from .decompose import LatentModel
from .graph import GraphError, SemanticDataset, fmt_real
from .index import RecommenderIndex, measure_recall
from .learn import TraceRow

DEFAULT_RECALL_FRACTIONS = (0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_RECALL_QUERIES = 30


def _writelines(path, lines) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


# -- spectrum ------------------------------------------------------------------


def spectrum_report(model: LatentModel, outdir) -> list[str]:
    """Eigenvalue spectrum and its kernel transform, as TSV and figure."""
    ranks = np.arange(1, model.k + 1)
    kernel_values = model.kernel_values()
    rows = ["rank\teigenvalue\tkernel_value"]
    rows += [
        f"{r}\t{fmt_real(ev)}\t{fmt_real(kv)}"
        for r, ev, kv in zip(ranks, model.eigenvalues, kernel_values)
    ]
    tsv = _writelines(os.path.join(outdir, "spectrum.tsv"), rows)

    fig, ax = plotting.new()
    ax.plot(ranks, model.eigenvalues, "o-", label="eigenvalue")
    if not np.allclose(kernel_values, model.eigenvalues):
        ax.plot(ranks, kernel_values, "s--", label=f"kernel ({model.kernel.name})")
    ax.axhline(0.0, color="gray", linewidth=0.6, zorder=0)
    ax.set_xlabel("rank (by descending magnitude)")
    ax.set_ylabel("value")
    ax.set_title(f"spectrum, k={model.k} of n={model.n}")
    ax.legend()
    png = plotting.save(fig, os.path.join(outdir, "spectrum.png"))
    return [tsv, png]


# -- dataset stats -------------------------------------------------------------


def dataset_report(dataset: SemanticDataset, outdir) -> list[str]:
    """Entity and edge counts per type, as TSV and paired bar charts."""
    stats = dataset.stats()
    rows = ["section\tname\tcount"]
    rows += [f"entities\t{name}\t{c}" for name, c in stats["entities"].items()]
    rows += [f"edges\t{name}\t{c}" for name, c in stats["edges"].items()]
    tsv = _writelines(os.path.join(outdir, "dataset_stats.tsv"), rows)

    fig_w = plotting.size()[0] * 2
    fig = plotting.plt.figure(figsize=(fig_w, plotting.size()[1]))
    for pos, (section, title) in enumerate(
            [("entities", "entities per type"), ("edges", "edges per relationship")]):
        ax = fig.add_subplot(1, 2, pos + 1)
        names = list(stats[section])
        counts = [stats[section][n] for n in names]
        ax.barh(range(len(names)), counts)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.set_xlabel("count")
        ax.set_title(title)
    fig.tight_layout()
    png = plotting.save(fig, os.path.join(outdir, "dataset_stats.png"))
    return [tsv, png]


# -- recall vs budget ----------------------------------------------------------


def recall_report(index: RecommenderIndex, model: LatentModel, outdir,
                  k: int = 10, fractions=DEFAULT_RECALL_FRACTIONS,
                  n_queries: int = DEFAULT_RECALL_QUERIES, seed: int = 0) -> list[str]:
    """Recall@k of the budgeted search across budget fractions.

    Queries are a seeded sample of the model's own entity vectors, so the
    curve reflects the data the index actually serves.
    """
    if index.size == 0:
        raise GraphError("cannot measure recall on an empty index")
    k = min(k, index.size)
    rng = np.random.default_rng(seed)
    pick = rng.choice(model.n, size=min(n_queries, model.n), replace=False)
    queries = [model.vectors[row] for row in sorted(pick)]

    rows = ["budget\tbudget_fraction\trecall_at_k"]
    budgets, recalls = [], []
    for fraction in fractions:
        budget = max(k, math.ceil(fraction * index.size))
        budget = min(budget, index.size)
        recall = measure_recall(index, model, queries, k=k, budget=budget)
        budgets.append(budget)
        recalls.append(recall)
        rows.append(f"{budget}\t{fmt_real(budget / index.size)}\t{fmt_real(recall)}")
    tsv = _writelines(os.path.join(outdir, "recall.tsv"), rows)

    fig, ax = plotting.new()
    ax.plot([b / index.size for b in budgets], recalls, "o-")
    ax.set_xlabel("budget / candidates")
    ax.set_ylabel(f"recall@{k}")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"budgeted search recall, {index.size} indexed entities")
    png = plotting.save(fig, os.path.join(outdir, "recall.png"))
    return [tsv, png]


# -- weight-learning trace -----------------------------------------------------


def load_trace(path) -> list[TraceRow]:
    """Parse a weight-search trace TSV back into rows."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("pass\trelation\tweight\tmetric"):
        raise GraphError(f"{path} is not a weight-search trace")
    has_modes = lines[0].split("\t") == ["pass", "relation", "weight", "metric", "mode"]
    rows = []
    for ln in lines[1:]:
        cols = ln.split("\t")
        if len(cols) < 4:
            raise GraphError(f"malformed trace line: {ln!r}")
        rows.append(TraceRow(
            sweep=int(cols[0]), relation=cols[1],
            weight=float(cols[2]), metric=float(cols[3]),
            mode=(cols[4] or None) if has_modes and len(cols) > 4 else None,
        ))
    return rows


def trace_report(trace: list[TraceRow], outdir, metric: str = "metric") -> list[str]:
    """Candidate-by-candidate search progression, one series per relation.

    NaN metrics (failed candidates) are drawn as x markers on the baseline of
    the finite values so they stay visible.
    """
    if not trace:
        raise GraphError("empty trace")
    fig, ax = plotting.new(5.6)
    finite = [r.metric for r in trace if math.isfinite(r.metric)]
    floor = min(finite) if finite else 0.0
    relations = list(dict.fromkeys(r.relation for r in trace))
    for rel in relations:
        xs = [i for i, r in enumerate(trace) if r.relation == rel]
        ys = [trace[i].metric if math.isfinite(trace[i].metric) else floor
              for i in xs]
        bad = [i for i in xs if not math.isfinite(trace[i].metric)]
        line, = ax.plot(xs, ys, "o-", label=rel)
        if bad:
            ax.plot(bad, [floor] * len(bad), "x", color=line.get_color(),
                    markersize=7)
    best = np.maximum.accumulate(
        [r.metric if math.isfinite(r.metric) else floor for r in trace])
    ax.plot(range(len(trace)), best, color="gray", linewidth=0.8,
            linestyle=":", label="best so far")
    ax.set_xlabel("candidate evaluation")
    ax.set_ylabel(metric)
    ax.set_title("relationship-weight search trace")
    ax.legend()
    png = plotting.save(fig, os.path.join(outdir, "learning_trace.png"))
    return [png]


# -- orchestration ---------------------------------------------------------


def render_report(outdir, dataset: SemanticDataset | None = None,
                  model: LatentModel | None = None,
                  index: RecommenderIndex | None = None,
                  trace: list[TraceRow] | None = None,
                  recall_k: int = 10, seed: int = 0) -> list[str]:
    """Render every report piece whose inputs are available."""
    os.makedirs(outdir, exist_ok=True)
    written: list[str] = []
    if dataset is not None:
        written += dataset_report(dataset, outdir)
    if model is not None:
        written += spectrum_report(model, outdir)
    if model is not None and index is not None:
        written += recall_report(index, model, outdir, k=recall_k, seed=seed)
    if trace:
        written += trace_report(trace, outdir)
    if not written:
        raise GraphError("nothing to report: no dataset, model, index, or trace")
    return written
