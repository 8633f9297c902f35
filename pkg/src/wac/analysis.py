"""Classifier-coefficient embeddings and similarity evaluation.

The hidden-layer weights of a word's MLP double as a distributional-style
word vector.  Hidden units of independently trained MLPs come in an
arbitrary order and sign, so extraction canonicalizes each classifier
first (prediction-preserving sign flips and a fixed unit order); without
this, distances between words would mostly reflect initialization noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import classifiers as clf
from .model import BackendMismatchError, OOVWordError, WacModel

logger = logging.getLogger(__name__)


class AnalysisError(Exception):
    pass


class UndefinedCorrelationError(AnalysisError):
    """Correlation is undefined (an input is constant)."""


@dataclass(eq=False)
class EmbeddingTable:
    vectors: dict[str, np.ndarray]
    dim: int
    source: str = "wac-hidden"

    def __post_init__(self):
        for word, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise AnalysisError(
                    f"embedding for {word!r} has length {vec.size}, expected {self.dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise AnalysisError(f"non-finite embedding for {word!r}")

    def words(self) -> list[str]:
        return list(self.vectors)


@dataclass(frozen=True)
class SimilarityPair:
    word_a: str
    word_b: str
    gold_score: float


def canonicalize_mlp(params: clf.MlpParams) -> clf.MlpParams:
    """Prediction-preserving canonical form: flip (w1 row, b1, w2) signs so
    every output weight is nonnegative, then order units by descending
    output weight (row bytes break ties)."""
    w1 = params.w1.copy()
    b1 = params.b1.copy()
    w2 = params.w2.copy()
    flip = w2 < 0
    w1[flip] *= -1.0
    b1[flip] *= -1.0
    w2[flip] *= -1.0
    order = sorted(
        range(len(w2)), key=lambda i: (-w2[i], w1[i].tobytes())
    )
    return clf.MlpParams(w1=w1[order], b1=b1[order], w2=w2[order], b2=params.b2)


def extract_embedding(model: WacModel, word: str) -> np.ndarray:
    """Row-major flattening of the canonicalized hidden weight matrix;
    biases are excluded (three values of incommensurate scale)."""
    model.require_backend("mlp", "coefficient embedding extraction")
    if word not in model.classifiers:
        raise OOVWordError(word)
    return canonicalize_mlp(model.classifiers[word]).w1.ravel().copy()


def embedding_table(model: WacModel) -> EmbeddingTable:
    vectors = {w: extract_embedding(model, w) for w in model.classifiers}
    dim = clf.HIDDEN_UNITS * model.feature_dim
    return EmbeddingTable(vectors=vectors, dim=dim, source="wac-hidden")


def cosine(u, v) -> float:
    """u.v / (|u||v|); zero-norm vectors get similarity 0 with a warning."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("cosine of a zero vector is defined as 0")
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def rank_average(values) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Pearson correlation of average-tie ranks."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two equal-length 1-D sequences")
    if len(xs) < 2:
        raise ValueError("spearman needs at least 2 observations")
    rx = rank_average(xs)
    ry = rank_average(ys)
    dx = rx - np.mean(rx)
    dy = ry - np.mean(ry)
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0.0:
        raise UndefinedCorrelationError("constant input; correlation undefined")
    return float(np.sum(dx * dy) / denom)


@dataclass(frozen=True)
class TableReport:
    rho: float
    coverage: int


@dataclass(frozen=True)
class SimilarityReport:
    tables: dict[str, TableReport]
    combined: TableReport | None
    n_pairs: int


def _covered(table: EmbeddingTable, pairs) -> list[SimilarityPair]:
    return [p for p in pairs if p.word_a in table.vectors and p.word_b in table.vectors]


def _rho_for(table: EmbeddingTable, pairs) -> TableReport:
    covered = _covered(table, pairs)
    if not covered:
        raise AnalysisError(f"no similarity pair is covered by table {table.source!r}")
    sims = [cosine(table.vectors[p.word_a], table.vectors[p.word_b]) for p in covered]
    gold = [p.gold_score for p in covered]
    return TableReport(rho=spearman(sims, gold), coverage=len(covered))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def eval_similarity(tables: dict[str, EmbeddingTable], pairs) -> SimilarityReport:
    """Spearman rho between embedding cosines and gold similarity scores.

    Each table is evaluated on the pairs it covers.  With two or more
    tables, a combined embedding concatenates the per-table L2-normalized
    vectors (so no table dominates by scale) over pairs covered by all.
    """
    if not tables:
        raise ValueError("need at least one embedding table")
    pairs = list(pairs)
    report = {name: _rho_for(table, pairs) for name, table in tables.items()}
    combined = None
    if len(tables) > 1:
        common = [
            p
            for p in pairs
            if all(p.word_a in t.vectors and p.word_b in t.vectors for t in tables.values())
        ]
        if not common:
            raise AnalysisError("no similarity pair is covered by every table")
        words = {w for p in common for w in (p.word_a, p.word_b)}
        concat = {
            w: np.concatenate([_unit(t.vectors[w]) for t in tables.values()])
            for w in words
        }
        sims = [cosine(concat[p.word_a], concat[p.word_b]) for p in common]
        gold = [p.gold_score for p in common]
        combined = TableReport(rho=spearman(sims, gold), coverage=len(common))
    return SimilarityReport(tables=report, combined=combined, n_pairs=len(pairs))


def probe_classifier(model: WacModel, word: str, sweep) -> list[tuple[float, float]]:
    """Classifier response curve across a feature sweep: ordered
    (attribute value, probability) points."""
    if word not in model.classifiers:
        raise OOVWordError(word)
    classifier = model.classifiers[word]
    probs = clf.predict_batch(classifier, sweep.vectors)
    return [(float(v), float(p)) for v, p in zip(sweep.values, probs)]


def load_similarity_pairs(path) -> list[SimilarityPair]:
    """Tab-separated word_a, word_b, score; compatible with the common
    lexical-similarity benchmark layouts."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise AnalysisError(
                    f"{path}:{lineno}: expected 'word_a<TAB>word_b<TAB>score', got {line!r}"
                )
            try:
                score = float(fields[2])
            except ValueError as exc:
                raise AnalysisError(f"{path}:{lineno}: bad score {fields[2]!r}") from exc
            pairs.append(SimilarityPair(fields[0], fields[1], score))
    return pairs


def load_external_embeddings(path, source: str = "external") -> EmbeddingTable:
    """Text format: 'word v1 v2 ... vd' per line, d fixed by the first line;
    duplicate words keep the last occurrence with a warning."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(" ")
            word = fields[0]
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=float)
            except ValueError as exc:
                raise AnalysisError(f"{path}:{lineno}: unparseable vector") from exc
            if dim is None:
                dim = vec.size
                if dim == 0:
                    raise AnalysisError(f"{path}:{lineno}: no vector components")
            elif vec.size != dim:
                raise AnalysisError(
                    f"{path}:{lineno}: ragged line, {vec.size} components, expected {dim}"
                )
            if word in vectors:
                logger.warning("duplicate embedding for %r; keeping the last", word)
            vectors[word] = vec
    if not vectors:
        raise AnalysisError(f"{path}: empty embedding file")
    return EmbeddingTable(vectors=vectors, dim=dim, source=source)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")
