"""Verification protocol: genuine/impostor pair enumeration, cosine scoring,
Mann-Whitney AUC, and repeated-trial aggregation.

Canonical pair order, used everywhere scores are produced or consumed: the
genuine stream walks identities in first-appearance order and yields each
unordered within-identity pair (a, b), a before b in record order; then the
impostor stream yields every cross-identity pair for identity indices i < j,
record-major. Everything here is deterministic; trial-to-trial variability
belongs to the embedder backends.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.stats import rankdata

from .errors import ProtocolError, ScoringError
from .types import DatasetManifest, Embedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairCounts:
    genuine: int
    impostor: int

    @property
    def total(self) -> int:
        return self.genuine + self.impostor


@dataclass(frozen=True)
class ScoreSet:
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray

    def __post_init__(self):
        for name in ("genuine_scores", "impostor_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ScoringError(f"{name} must be 1-D")
            if not np.all(np.isfinite(arr)):
                raise ScoringError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    @property
    def counts(self) -> PairCounts:
        return PairCounts(len(self.genuine_scores), len(self.impostor_scores))


@dataclass(frozen=True)
class TrialSummary:
    auc_per_trial: tuple[float, ...]
    mean: float
    std: float
    trials: int

    def formatted(self) -> str:
        base = f"{self.mean:.4f} ± {self.std:.4f}"
        return base + " (single trial)" if self.trials == 1 else base


def pair_counts(manifest: DatasetManifest) -> PairCounts:
    """Closed-form genuine/impostor counts from identity sizes."""
    sizes = [len(recs) for recs in manifest.identities().values()]
    if len(sizes) < 2:
        raise ProtocolError("verification requires N ≥ 2")
    genuine = sum(comb(m, 2) for m in sizes)
    total = sum(sizes)
    # sum over i<j of Mi*Mj, via (sum^2 - sum of squares) / 2
    impostor = (total * total - sum(m * m for m in sizes)) // 2
    return PairCounts(genuine, impostor)


def iter_pairs(manifest: DatasetManifest) -> Iterator[tuple[str, str, bool]]:
    """Yield (key_a, key_b, is_genuine) in canonical order."""
    groups = list(manifest.identities().values())
    if len(groups) < 2:
        raise ProtocolError("verification requires N ≥ 2")
    for recs in groups:
        for a in range(len(recs)):
            for b in range(a + 1, len(recs)):
                yield recs[a].key, recs[b].key, True
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            for ra in groups[i]:
                for rb in groups[j]:
                    yield ra.key, rb.key, False


def enumerate_pairs(manifest: DatasetManifest) -> tuple[PairCounts, Iterator[tuple[str, str, bool]]]:
    return pair_counts(manifest), iter_pairs(manifest)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ScoringError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _identity_matrices(embeddings: dict[str, Embedding],
                       manifest: DatasetManifest) -> list[np.ndarray]:
    """Unit-row matrix per identity, rows in record order."""
    matrices = []
    for recs in manifest.identities().values():
        rows = []
        for rec in recs:
            emb = embeddings.get(rec.key)
            if emb is None:
                raise ScoringError(f"no embedding for record {rec.key}")
            rows.append(np.asarray(emb.vector, dtype=np.float64))
        x = np.stack(rows)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ScoringError("cosine similarity undefined for zero-norm vector")
        matrices.append(x / norms)
    return matrices


def score_all_pairs(embeddings: dict[str, Embedding],
                    manifest: DatasetManifest) -> ScoreSet:
    """Cosine scores for every pair, blockwise per identity pair, in the
    canonical order of iter_pairs."""
    counts = pair_counts(manifest)
    mats = _identity_matrices(embeddings, manifest)

    genuine = np.empty(counts.genuine, dtype=np.float64)
    pos = 0
    for x in mats:
        m = x.shape[0]
        if m < 2:
            continue
        sims = x @ x.T
        iu = np.triu_indices(m, k=1)
        block = sims[iu]
        genuine[pos:pos + len(block)] = block
        pos += len(block)

    impostor = np.empty(counts.impostor, dtype=np.float64)
    pos = 0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            block = (mats[i] @ mats[j].T).ravel()
            impostor[pos:pos + len(block)] = block
            pos += len(block)

    return ScoreSet(np.clip(genuine, -1.0, 1.0), np.clip(impostor, -1.0, 1.0))


def compute_auc(scores: ScoreSet) -> float:
    """P(genuine > impostor) + 0.5 P(tie), exactly, via mid-rank statistics."""
    g = scores.genuine_scores
    i = scores.impostor_scores
    if len(g) == 0 or len(i) == 0:
        raise ProtocolError("AUC requires non-empty genuine and impostor sets")
    ranks = rankdata(np.concatenate([g, i]), method="average")
    rank_sum = float(ranks[:len(g)].sum())
    u = rank_sum - len(g) * (len(g) + 1) / 2.0
    return u / (len(g) * len(i))


def aggregate_trials(aucs) -> TrialSummary:
    values = [float(a) for a in aucs]
    if not values:
        raise ProtocolError("no trial AUC values to aggregate")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return TrialSummary(tuple(values), mean, std, len(values))


def subsample_impostors(scores: ScoreSet, max_impostor: int,
                        seed: int) -> tuple[ScoreSet, dict]:
    """Uniform impostor subsample with a recorded seed; genuine scores kept."""
    if max_impostor < 1:
        raise ProtocolError(f"max_impostor must be >= 1, got {max_impostor}")
    n = len(scores.impostor_scores)
    meta = {"seed": seed, "impostor_total": n, "impostor_kept": min(n, max_impostor)}
    if n <= max_impostor:
        return scores, meta
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=max_impostor, replace=False))
    return ScoreSet(scores.genuine_scores, scores.impostor_scores[idx]), meta


def save_results(path: str | Path, dataset: str, descriptor: dict, condition: str,
                 summary: TrialSummary, counts: PairCounts,
                 subsample: dict | None = None) -> None:
    doc = {
        "dataset": dataset,
        "backend": dict(descriptor),
        "input_condition": condition,
        "trials": list(summary.auc_per_trial),
        "mean": summary.mean,
        "std": summary.std,
        "pair_counts": {"genuine": counts.genuine, "impostor": counts.impostor},
    }
    if subsample is not None:
        doc["impostor_subsample"] = subsample
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_results(path: str | Path) -> list[dict]:
    """Load a results file; accepts a single result object or a list of them."""
    doc = json.loads(Path(path).read_text())
    return doc if isinstance(doc, list) else [doc]
