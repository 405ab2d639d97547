"""
Evaluation service.
Ranking metrics, classification rates, per-relation tables, stratified
curves and report serialisation.

Report CSV layout (`<path>` plus two siblings):

    <stem>.csv            one row per query:
                          source,target,relation,polarity,label,predicted,rank,
                          ap_at_5,num_paths,avg_path_length,ranking
                          (ranking is the space-separated class order)
    <stem>.relations.csv  relation,positives,negatives,map_at_5,tpr,tnr,avg_accuracy
    <stem>.summary.csv    key,value (k, labels, skipped and the aggregates)

Undefined rates are written as empty cells. Curves are written as
bin_lo,bin_hi,n,map_at_5 rows.
"""
import csv
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, InputFormatError, MissingFileError, NoSubgraphError, OutputError
from ..graph.query import NULL_CLASS, LabelSet, Query
from ..graph.query_graph import batch_graphs, path_statistics
from ..kb.knowledge_base import KnowledgeBase
from ..logging_config import logger
from ..model import ModelParams, forward, predict
from ..schemas import Aggregates, Curve, CurvePoint, EvalReport, QueryResult, RelationRow
from .training_service import GraphCache, check_compatible

ROW_COLUMNS = [
    "source", "target", "relation", "polarity", "label", "predicted", "rank",
    "ap_at_5", "num_paths", "avg_path_length", "ranking",
]
RELATION_COLUMNS = ["relation", "positives", "negatives", "map_at_5", "tpr", "tnr", "avg_accuracy"]
CURVE_COLUMNS = ["bin_lo", "bin_hi", "n", "map_at_5"]


# ==================== Ranking metrics ====================

def _check_k(k: int):
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")


def rank_of(ranking: Sequence[int], true_class: int) -> int:
    """1-based position of the true class in the ranking."""
    return list(ranking).index(true_class) + 1


def ap_at_k(ranking: Sequence[int], true_class: int, k: int = 5) -> float:
    """Single-relevant AP@k: 1/rank if rank <= k else 0."""
    _check_k(k)
    rank = rank_of(ranking, true_class)
    return 1.0 / rank if rank <= k else 0.0


def average_precision_at_k(ranking: Sequence[int], relevant: Iterable[int], k: int = 5) -> float:
    """
    General AP@k for any number of relevant classes.

    Sum of precision@i over relevant hits in the top k, divided by
    min(|relevant|, k). Reduces to ap_at_k for a single relevant class.
    """
    _check_k(k)
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for i, cls in enumerate(list(ranking)[:k], start=1):
        if cls in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def map_at_k(rankings: Sequence[Sequence[int]], true_classes: Sequence[int], k: int = 5) -> float:
    _check_k(k)
    if len(rankings) != len(true_classes):
        raise ValueError(f"{len(rankings)} rankings for {len(true_classes)} true classes")
    if not rankings:
        return 0.0
    return float(np.mean([ap_at_k(r, c, k) for r, c in zip(rankings, true_classes)]))


def mrr(rankings: Sequence[Sequence[int]], true_classes: Sequence[int]) -> float:
    if not rankings:
        return 0.0
    return float(np.mean([1.0 / rank_of(r, c) for r, c in zip(rankings, true_classes)]))


# ==================== Classification rates ====================

def _rate(hits: int, n: int) -> Optional[float]:
    return hits / n if n else None


def classification_rates(
    predictions: Sequence[int],
    labels: Sequence[int],
    pools: Sequence[str],
) -> Tuple[Optional[float], Optional[float], float, List[RelationRow]]:
    """
    TPR, TNR and average accuracy, globally and per target relation.

    Args:
        predictions: Argmax class per instance
        labels: True class per instance; negatives carry the null class
        pools: Target relation each instance belongs to

    Returns:
        (TPR, TNR, avg-accuracy, per-relation rows). A rate with no
        instances to measure is None, never 0. Rows are ordered by first
        sighting of the relation; their map_at_5 is left None.
    """
    if not (len(predictions) == len(labels) == len(pools)):
        raise ValueError("predictions, labels and pools differ in length")
    if not predictions:
        raise ValueError("no instances to score")

    counts: Dict[str, List[int]] = {}  # relation -> [pos, tp, neg, tn]
    for pred, label, pool in zip(predictions, labels, pools):
        c = counts.setdefault(pool, [0, 0, 0, 0])
        if label == NULL_CLASS:
            c[2] += 1
            c[3] += pred == NULL_CLASS
        else:
            c[0] += 1
            c[1] += pred == label

    rows = [
        RelationRow(
            relation=rel,
            positives=pos,
            negatives=neg,
            map_at_5=None,
            tpr=_rate(tp, pos),
            tnr=_rate(tn, neg),
            avg_accuracy=_rate(tp + tn, pos + neg),
        )
        for rel, (pos, tp, neg, tn) in counts.items()
    ]
    pos = sum(c[0] for c in counts.values())
    tp = sum(c[1] for c in counts.values())
    neg = sum(c[2] for c in counts.values())
    tn = sum(c[3] for c in counts.values())
    return _rate(tp, pos), _rate(tn, neg), (tp + tn) / (pos + neg), rows


def top_bottom(rows: Sequence[RelationRow], n: int = 3) -> Tuple[List[RelationRow], List[RelationRow]]:
    """Best and worst n relations by average accuracy; rows without one are left out."""
    ranked = sorted(
        (r for r in rows if r.avg_accuracy is not None),
        key=lambda r: (-r.avg_accuracy, r.relation),
    )
    return ranked[:n], ranked[::-1][:n]


# ==================== Reports ====================

def build_report(results: Sequence[QueryResult], labels: Sequence[str], k: int = 5, skipped: int = 0) -> EvalReport:
    """Aggregate per-query results into a report; everything is recomputable from `results`."""
    _check_k(k)
    if not results:
        raise InputFormatError("cannot build a report from zero queries")

    aps = [ap_at_k(r.ranking, r.label, k) for r in results]
    pools = [r.relation or "" for r in results]
    tpr, tnr, avg_acc, rows = classification_rates(
        [r.predicted for r in results], [r.label for r in results], pools
    )

    per_pool: Dict[str, List[float]] = {}
    for pool, ap in zip(pools, aps):
        per_pool.setdefault(pool, []).append(ap)
    rows = [row.model_copy(update={"map_at_5": float(np.mean(per_pool[row.relation]))}) for row in rows]

    return EvalReport(
        labels=list(labels),
        k=k,
        rows=list(results),
        aggregates=Aggregates(
            queries=len(results),
            map_at_5=float(np.mean(aps)),
            tpr=tpr,
            tnr=tnr,
            avg_accuracy=avg_acc,
        ),
        relations=rows,
        skipped=skipped,
    )


def evaluate(
    kb: KnowledgeBase,
    queries: Sequence[Query],
    params: ModelParams,
    max_path_length: int,
    batch_size: int = 32,
    with_paths: bool = True,
    max_paths: int = 100_000,
    threads: int = 1,
) -> EvalReport:
    """
    Score every query with a trained model.

    Queries without a subgraph are skipped and counted in `report.skipped`.

    Raises:
        InputFormatError: no queries were given
        NoSubgraphError: no query has a subgraph within `max_path_length`
    """
    config = params.config
    check_compatible(config, kb)
    labels = LabelSet.from_names(config.labels)
    cache = GraphCache(kb, max_path_length, threads=threads)
    if not queries:
        raise InputFormatError("no queries to evaluate")
    usable = cache.warm(queries)
    if not usable:
        raise NoSubgraphError(f"none of {len(queries)} queries has a path of length <= {max_path_length}")

    results: List[QueryResult] = []
    for i in range(0, len(usable), batch_size):
        chunk = usable[i:i + batch_size]
        graphs = [cache.get(q) for q in chunk]
        logits = forward(batch_graphs(graphs, dtype=params.dtype), params, config).numpy()
        for q, qg, row in zip(chunk, graphs, logits):
            ranking, predicted = predict(row)
            num_paths, avg_len = path_statistics(qg, max_paths) if with_paths else (0, 0.0)
            results.append(
                QueryResult(
                    source=kb.entities.name(q.source),
                    target=kb.entities.name(q.target),
                    relation=q.relation,
                    positive=q.positive,
                    label=labels.label(q),
                    predicted=predicted,
                    ranking=[int(c) for c in ranking],
                    num_paths=num_paths,
                    avg_path_length=avg_len,
                )
            )

    report = build_report(results, labels.names, skipped=len(queries) - len(usable))
    agg = report.aggregates
    logger.info(
        "Evaluation finished",
        queries=agg.queries,
        skipped=report.skipped,
        map_at_5=round(agg.map_at_5, 4),
        tpr=agg.tpr,
        tnr=agg.tnr,
        avg_accuracy=round(agg.avg_accuracy, 4),
    )
    return report


# ==================== Stratification ====================

def _equal_frequency(values: np.ndarray, bins: int) -> List[np.ndarray]:
    """
    Split sorted values into at most `bins` contiguous groups of near-equal size.

    Equal values never straddle a boundary. With at least `bins` distinct
    values there are exactly `bins` groups.
    """
    distinct, counts = np.unique(values, return_counts=True)
    bins = min(bins, len(distinct))
    groups: List[np.ndarray] = []
    start = 0
    remaining = int(counts.sum())
    for b in range(bins):
        left = bins - b
        if left == 1:
            groups.append(distinct[start:])
            break
        target = remaining / left
        end = start + 1
        taken = int(counts[start])
        # grow while it brings the group closer to the target and leaves a value per later bin
        while end < len(distinct) - (left - 1) and abs(taken + counts[end] - target) <= abs(taken - target):
            taken += int(counts[end])
            end += 1
        groups.append(distinct[start:end])
        remaining -= taken
        start = end
    return groups


def stratify(report: EvalReport, by: str, bins: Optional[int] = None) -> Curve:
    """
    Per-bin MAP@k over query-graph statistics.

    by="path-length": mean simple-path length per query; unit-width buckets
    [floor(v), floor(v)+1) by default, `bins` equal-width intervals otherwise.
    by="parallel-paths": number of simple paths; `bins` (default 20)
    equal-frequency intervals over the observed counts.

    Empty bins are omitted from `points` and listed in `omitted_bins`.
    """
    if by not in ("path-length", "parallel-paths"):
        raise ConfigError(f"cannot stratify by '{by}'")
    if bins is not None and bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")

    rows = report.rows
    values = np.array(
        [r.avg_path_length if by == "path-length" else r.num_paths for r in rows], dtype=np.float64
    )
    aps = np.array([ap_at_k(r.ranking, r.label, report.k) for r in rows])

    edges: List[Tuple[float, float]] = []
    if by == "parallel-paths":
        for group in _equal_frequency(values, bins or 20):
            edges.append((float(group[0]), float(group[-1])))
        members = [(values >= lo) & (values <= hi) for lo, hi in edges]
    elif bins is None:
        lows = np.unique(np.floor(values))
        edges = [(float(lo), float(lo) + 1.0) for lo in lows]
        members = [(values >= lo) & (values < hi) for lo, hi in edges]
    else:
        lo_all, hi_all = float(values.min()), float(values.max())
        width = (hi_all - lo_all) / bins or 1.0
        index = np.minimum(((values - lo_all) / width).astype(np.int64), bins - 1)
        edges = [(lo_all + b * width, lo_all + (b + 1) * width) for b in range(bins)]
        members = [index == b for b in range(bins)]

    points: List[CurvePoint] = []
    omitted: List[Tuple[float, float]] = []
    for (lo, hi), mask in zip(edges, members):
        n = int(mask.sum())
        if n == 0:
            omitted.append((lo, hi))
            continue
        points.append(CurvePoint(bin_lo=lo, bin_hi=hi, n=n, map_at_5=float(aps[mask].mean())))
    if omitted:
        logger.warning("Empty bins omitted", by=by, omitted=len(omitted))

    return Curve(by=by, requested_bins=bins, points=points, omitted_bins=omitted)


# ==================== Serialisation ====================

def _opt(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def _parse_opt(value: str) -> Optional[float]:
    return None if value == "" else float(value)


def _siblings(path: str) -> Tuple[str, str]:
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".relations.csv", stem + ".summary.csv"


def emit_report(report: EvalReport, path: str, fmt: str = "json"):
    """
    Write a report losslessly as JSON, or as CSV plus two sibling files.

    Raises:
        OutputError: the path cannot be written
    """
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown report format '{fmt}'")
    try:
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as f:
                f.write(report.model_dump_json(indent=2))
        else:
            _write_report_csv(report, path)
    except OSError as e:
        raise OutputError(f"cannot write report to {path}: {e.strerror}") from None
    logger.info("Report written", path=path, format=fmt, rows=len(report.rows))


def _write_report_csv(report: EvalReport, path: str):
    relations_path, summary_path = _siblings(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ROW_COLUMNS)
        for r in report.rows:
            writer.writerow([
                r.source, r.target, r.relation or "", "+" if r.positive else "-", r.label, r.predicted,
                rank_of(r.ranking, r.label), repr(ap_at_k(r.ranking, r.label, report.k)),
                r.num_paths, repr(r.avg_path_length), " ".join(str(c) for c in r.ranking),
            ])

    with open(relations_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RELATION_COLUMNS)
        for row in report.relations:
            writer.writerow([
                row.relation, row.positives, row.negatives,
                _opt(row.map_at_5), _opt(row.tpr), _opt(row.tnr), _opt(row.avg_accuracy),
            ])

    agg = report.aggregates
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["key", "value"])
        writer.writerow(["k", report.k])
        writer.writerow(["labels", "|".join(report.labels)])
        writer.writerow(["skipped", report.skipped])
        writer.writerow(["queries", agg.queries])
        writer.writerow(["map_at_5", repr(agg.map_at_5)])
        writer.writerow(["tpr", _opt(agg.tpr)])
        writer.writerow(["tnr", _opt(agg.tnr)])
        writer.writerow(["avg_accuracy", repr(agg.avg_accuracy)])


def _read_csv(path: str, header: List[str]) -> List[Dict[str, str]]:
    if not os.path.isfile(path):
        raise MissingFileError(f"report file not found: {path}")
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != header:
            raise InputFormatError(f"unexpected header {reader.fieldnames}", source=path, line_number=1)
        return list(reader)


def load_report(path: str) -> EvalReport:
    """Read a report written by emit_report; the format follows the extension."""
    if not os.path.isfile(path):
        raise MissingFileError(f"report file not found: {path}")
    if not path.endswith(".csv"):
        with open(path, "r", encoding="utf-8") as f:
            return EvalReport.model_validate_json(f.read())

    relations_path, summary_path = _siblings(path)
    rows = [
        QueryResult(
            source=r["source"],
            target=r["target"],
            relation=r["relation"] or None,
            positive=r["polarity"] == "+",
            label=int(r["label"]),
            predicted=int(r["predicted"]),
            ranking=[int(c) for c in r["ranking"].split()],
            num_paths=int(r["num_paths"]),
            avg_path_length=float(r["avg_path_length"]),
        )
        for r in _read_csv(path, ROW_COLUMNS)
    ]
    relations = [
        RelationRow(
            relation=r["relation"],
            positives=int(r["positives"]),
            negatives=int(r["negatives"]),
            map_at_5=_parse_opt(r["map_at_5"]),
            tpr=_parse_opt(r["tpr"]),
            tnr=_parse_opt(r["tnr"]),
            avg_accuracy=_parse_opt(r["avg_accuracy"]),
        )
        for r in _read_csv(relations_path, RELATION_COLUMNS)
    ]
    summary = {r["key"]: r["value"] for r in _read_csv(summary_path, ["key", "value"])}
    return EvalReport(
        labels=summary["labels"].split("|"),
        k=int(summary["k"]),
        rows=rows,
        aggregates=Aggregates(
            queries=int(summary["queries"]),
            map_at_5=float(summary["map_at_5"]),
            tpr=_parse_opt(summary["tpr"]),
            tnr=_parse_opt(summary["tnr"]),
            avg_accuracy=float(summary["avg_accuracy"]),
        ),
        relations=relations,
        skipped=int(summary["skipped"]),
    )


def write_curve(curve: Curve, path: str):
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CURVE_COLUMNS)
            for p in curve.points:
                writer.writerow([repr(p.bin_lo), repr(p.bin_hi), p.n, repr(p.map_at_5)])
    except OSError as e:
        raise OutputError(f"cannot write curve to {path}: {e.strerror}") from None
