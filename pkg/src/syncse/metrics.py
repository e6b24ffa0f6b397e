"""Evaluation: Spearman correlation for STS pairs, MAP for reranking files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from syncse.trainer import ProjectionParams, checkpoint_id, encode_batch, load_checkpoint


class MetricsError(Exception):
    pass


# ---------------------------------------------------------------------------
# Core metrics
# ---------------------------------------------------------------------------


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the average of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of fractional (average-tie) ranks."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricsError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.ndim != 1 or x.shape[0] < 2:
        raise MetricsError("need at least two paired observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise MetricsError("constant input has no rank correlation")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def average_precision(ranked: Sequence[bool]) -> float:
    """Mean of precision@k over relevant positions; 0.0 with no relevant item."""
    if len(ranked) == 0:
        raise MetricsError("empty ranking")
    hits = 0
    total = 0.0
    for position, relevant in enumerate(ranked, start=1):
        if relevant:
            hits += 1
            total += hits / position
    return total / hits if hits else 0.0


# ---------------------------------------------------------------------------
# File-level evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    task: str
    per_file: dict[str, float]
    average: float
    checkpoint: dict
    created_at: str | None = None  # only manifests carry wall-clock times

    def as_dict(self) -> dict:
        payload = {
            "task": self.task,
            "per_file": self.per_file,
            "average": self.average,
            "checkpoint": self.checkpoint,
        }
        if self.created_at is not None:
            payload["created_at"] = self.created_at
        return payload

    def pretty(self) -> str:
        lines = [f"{self.task} evaluation ({self.checkpoint.get('file', '?')})"]
        for name, value in self.per_file.items():
            lines.append(f"  {name:<30s} {value:8.4f}")
        lines.append(f"  {'average':<30s} {self.average:8.4f}")
        return "\n".join(lines)


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise MetricsError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    if not records:
        raise MetricsError(f"{path} is empty")
    return records


def _pair_cosines(params: ProjectionParams, texts_a, texts_b) -> np.ndarray:
    A = encode_batch(texts_a, params)
    B = encode_batch(texts_b, params)
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise MetricsError("zero-norm embedding while scoring pairs")
    return np.sum(A * B, axis=1) / (na * nb)


def eval_sts(checkpoint_path: str | Path, pair_files: Sequence[str | Path]) -> EvalReport:
    """Spearman rho between gold scores and eval-mode cosine, per file + mean."""
    if not pair_files:
        raise MetricsError("no pair files given")
    params = load_checkpoint(checkpoint_path)
    per_file: dict[str, float] = {}
    for raw_path in pair_files:
        path = Path(raw_path)
        records = _read_jsonl(path)
        try:
            texts_a = [r["text_a"] for r in records]
            texts_b = [r["text_b"] for r in records]
            gold = [float(r["score"]) for r in records]
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricsError(f"{path}: bad pair record: {exc}") from exc
        cosines = _pair_cosines(params, texts_a, texts_b)
        try:
            per_file[path.name] = spearman(gold, cosines)
        except MetricsError as exc:
            raise MetricsError(f"{path}: {exc}") from exc
    average = float(np.mean(list(per_file.values())))
    return EvalReport(
        task="sts",
        per_file=per_file,
        average=average,
        checkpoint=checkpoint_id(checkpoint_path),
    )


def rerank_queries(params: ProjectionParams, records: list[dict], path: Path) -> list[float]:
    scores = []
    for qi, record in enumerate(records):
        try:
            query = record["query"]
            positives = list(record["positives"])
            negatives = list(record["negatives"])
        except (KeyError, TypeError) as exc:
            raise MetricsError(f"{path}: bad rerank record {qi}: {exc}") from exc
        candidates = positives + negatives
        if not candidates:
            raise MetricsError(f"{path}: query {qi} has no candidates")
        relevance = [True] * len(positives) + [False] * len(negatives)
        sims = _pair_cosines(params, [query] * len(candidates), candidates)
        # Stable sort on descending similarity: ties keep original index order.
        order = np.argsort(-sims, kind="stable")
        scores.append(average_precision([relevance[i] for i in order]))
    return scores


def eval_rerank(checkpoint_path: str | Path, rerank_files: Sequence[str | Path]) -> EvalReport:
    """MAP per file (mean AP over its queries) plus the across-file average."""
    if not rerank_files:
        raise MetricsError("no rerank files given")
    params = load_checkpoint(checkpoint_path)
    per_file: dict[str, float] = {}
    for raw_path in rerank_files:
        path = Path(raw_path)
        records = _read_jsonl(path)
        scores = rerank_queries(params, records, path)
        per_file[path.name] = float(np.mean(scores))
    average = float(np.mean(list(per_file.values())))
    return EvalReport(
        task="rerank",
        per_file=per_file,
        average=average,
        checkpoint=checkpoint_id(checkpoint_path),
    )


def write_report(report: EvalReport, path: str | Path):
    Path(path).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
