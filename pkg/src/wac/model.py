"""Word-classifier model: vocabulary construction, training, persistence.

Each vocabulary word is paired with a binary classifier over entity
feature vectors.  Positive examples for a word are the gold targets of
training expressions containing it; negatives are sampled from targets
of expressions that do not contain it, at a fixed negative:positive
ratio.  Words with too few positives are dropped from the vocabulary.
Relational phrase classifiers (over feature-difference vectors) live in
a separate map and are trained by the composition module.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifiers as clf
from .classifiers import TrainConfig, WordClassifier
from .data import Dataset
from .parsing import Lexicons, lexicons_from_jsonable, lexicons_jsonable

logger = logging.getLogger(__name__)

MODEL_FILE_VERSION = 1

BACKENDS = ("logreg", "mlp", "tree")


class ModelError(Exception):
    pass


class OOVWordError(ModelError):
    """Word has no trained classifier; callers usually skip it."""


class BackendMismatchError(ModelError):
    """Operation requires a different classifier backend."""


class ModelFormatError(ModelError):
    """Unreadable or unsupported model file."""


@dataclass(frozen=True)
class SamplingConfig:
    neg_ratio: int = 5
    min_positives: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")


@dataclass(eq=False)
class WacModel:
    backend: str
    classifiers: dict[str, WordClassifier]
    relational: dict[str, WordClassifier]
    feature_dim: int
    train_meta: dict
    sampling: SamplingConfig
    train_config: TrainConfig
    lexicons: Lexicons = field(default_factory=Lexicons)

    def vocabulary(self) -> tuple[str, ...]:
        return tuple(self.classifiers)

    def require_backend(self, backend: str, operation: str) -> None:
        if self.backend != backend:
            raise BackendMismatchError(
                f"{operation} requires the {backend!r} backend, model is {self.backend!r}"
            )


def stable_word_seed(seed: int, word: str, stream: str) -> list[int]:
    """Deterministic per-(word, stream) RNG seed material, independent of
    hash randomization and iteration order."""
    return [seed & 0xFFFFFFFF, zlib.crc32(word.encode("utf-8")), zlib.crc32(stream.encode("utf-8"))]


def collect_examples(dataset: Dataset, word: str):
    """(positive vectors, negative pool vectors) for one word.

    Positives: gold-target features of every refexp containing the word,
    one entry per expression.  The pool holds targets of expressions not
    containing the word, minus any entity that is a positive for this
    word (the same region can be described both with and without it).
    """
    positives = []
    positive_ids = set()
    pool_entries = []
    for refexp in dataset.refexps:
        target = dataset.scenes[refexp.scene_id].entity(refexp.target_object_id)
        key = (refexp.scene_id, refexp.target_object_id)
        if word in refexp.tokens:
            positives.append(target.features)
            positive_ids.add(key)
        else:
            pool_entries.append((key, target.features))
    negative_pool = [feats for key, feats in pool_entries if key not in positive_ids]
    return positives, negative_pool


def sample_negatives(pool, n_needed: int, rng: np.random.Generator):
    """Draw without replacement, falling back to replacement (with a
    warning upstream) when the pool is smaller than the request."""
    if n_needed <= len(pool):
        idx = rng.choice(len(pool), size=n_needed, replace=False)
    else:
        idx = rng.choice(len(pool), size=n_needed, replace=True)
    return [pool[i] for i in idx]


def _train_backend(backend, positives, negatives, config: TrainConfig):
    if backend == "logreg":
        return clf.train_logreg(positives, negatives, config)
    if backend == "mlp":
        return clf.train_mlp(positives, negatives, config)
    if backend == "tree":
        return clf.train_tree(positives, negatives, config)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def train_word(
    backend: str,
    word: str,
    positives,
    pool,
    sampling: SamplingConfig,
    train_config: TrainConfig,
):
    """Sample negatives and fit one word classifier; returns (classifier, meta)."""
    rng = np.random.default_rng(stable_word_seed(sampling.seed, word, "neg"))
    n_neg = sampling.neg_ratio * len(positives)
    if n_neg > len(pool):
        logger.warning(
            "word %r: negative pool %d smaller than request %d, sampling with replacement",
            word,
            len(pool),
            n_neg,
        )
    negatives = sample_negatives(pool, n_neg, rng)
    word_config = replace(
        train_config, seed=stable_word_seed(train_config.seed, word, "init")
    )
    classifier = _train_backend(backend, positives, negatives, word_config)
    return classifier, {"n_pos": len(positives), "n_neg": len(negatives)}


def train_model(
    dataset: Dataset,
    backend: str,
    sampling: SamplingConfig,
    train_config: TrainConfig,
    lexicons: Lexicons | None = None,
) -> WacModel:
    """Train a classifier for every word with enough positive examples.

    Words with fewer than ``sampling.min_positives`` positives are dropped;
    words whose negative pool is empty (they occur in every expression)
    cannot be trained as binary classifiers and are skipped with a warning.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    lexicons = lexicons if lexicons is not None else Lexicons()
    vocabulary = sorted({tok for refexp in dataset.refexps for tok in refexp.tokens})
    trained: dict[str, WordClassifier] = {}
    meta: dict[str, dict] = {}
    excluded: list[str] = []
    for word in vocabulary:
        positives, pool = collect_examples(dataset, word)
        if len(positives) < sampling.min_positives:
            excluded.append(word)
            continue
        if not pool:
            logger.warning(
                "word %r occurs in every expression; no negatives available, skipping",
                word,
            )
            excluded.append(word)
            continue
        trained[word], meta[word] = train_word(
            backend, word, positives, pool, sampling, train_config
        )
    if not trained:
        raise ModelError("no word passed the vocabulary filter; nothing to train")
    logger.info(
        "trained %d word classifiers (%d excluded by the %d-positive filter)",
        len(trained),
        len(excluded),
        sampling.min_positives,
    )
    return WacModel(
        backend=backend,
        classifiers=trained,
        relational={},
        feature_dim=dataset.feature_dim,
        train_meta={"words": meta, "relational": {}, "excluded": excluded},
        sampling=sampling,
        train_config=train_config,
        lexicons=lexicons,
    )


def word_fitness(model: WacModel, word: str, entity) -> float:
    """Probability that the entity fits the word; raises OOVWordError for
    words outside the trained vocabulary."""
    if word not in model.classifiers:
        raise OOVWordError(word)
    features = entity.features if hasattr(entity, "features") else entity
    return clf.predict(model.classifiers[word], features)


# --- persistence ---------------------------------------------------------


def _params_jsonable(classifier: WordClassifier) -> dict:
    if isinstance(classifier, clf.LogRegParams):
        return {
            "kind": "logreg",
            "weights": classifier.weights.tolist(),
            "bias": classifier.bias,
        }
    if isinstance(classifier, clf.MlpParams):
        return {
            "kind": "mlp",
            "w1": classifier.w1.tolist(),
            "b1": classifier.b1.tolist(),
            "w2": classifier.w2.tolist(),
            "b2": classifier.b2,
        }
    if isinstance(classifier, clf.TreeLeaf):
        return {"kind": "leaf", "n_pos": classifier.n_pos, "n_neg": classifier.n_neg}
    if isinstance(classifier, clf.TreeSplit):
        return {
            "kind": "split",
            "feature_index": classifier.feature_index,
            "threshold": classifier.threshold,
            "left": _params_jsonable(classifier.left),
            "right": _params_jsonable(classifier.right),
        }
    raise TypeError(f"unknown classifier type {type(classifier)!r}")


def _params_from_jsonable(obj: dict) -> WordClassifier:
    kind = obj["kind"]
    if kind == "logreg":
        return clf.LogRegParams(
            weights=np.asarray(obj["weights"], dtype=float), bias=float(obj["bias"])
        )
    if kind == "mlp":
        return clf.MlpParams(
            w1=np.asarray(obj["w1"], dtype=float),
            b1=np.asarray(obj["b1"], dtype=float),
            w2=np.asarray(obj["w2"], dtype=float),
            b2=float(obj["b2"]),
        )
    if kind == "leaf":
        return clf.TreeLeaf(n_pos=int(obj["n_pos"]), n_neg=int(obj["n_neg"]))
    if kind == "split":
        return clf.TreeSplit(
            feature_index=int(obj["feature_index"]),
            threshold=float(obj["threshold"]),
            left=_params_from_jsonable(obj["left"]),
            right=_params_from_jsonable(obj["right"]),
        )
    raise ModelFormatError(f"unknown classifier kind {kind!r}")


def model_jsonable(model: WacModel) -> dict:
    return {
        "version": MODEL_FILE_VERSION,
        "backend": model.backend,
        "feature_dim": model.feature_dim,
        "config": {
            "sampling": {
                "neg_ratio": model.sampling.neg_ratio,
                "min_positives": model.sampling.min_positives,
                "seed": model.sampling.seed,
            },
            "train": {
                "max_epochs": model.train_config.max_epochs,
                "learning_rate": model.train_config.adam.learning_rate,
                "beta1": model.train_config.adam.beta1,
                "beta2": model.train_config.adam.beta2,
                "eps": model.train_config.adam.eps,
                "l2_alpha": model.train_config.l2_alpha,
                "l1_lambda": model.train_config.l1_lambda,
                "tree_max_depth": model.train_config.tree_max_depth,
                "min_leaf": model.train_config.min_leaf,
                "seed": model.train_config.seed if isinstance(model.train_config.seed, int) else list(model.train_config.seed),
                "convergence_tol": model.train_config.convergence_tol,
            },
            "lexicons": lexicons_jsonable(model.lexicons),
        },
        "classifiers": {w: _params_jsonable(c) for w, c in sorted(model.classifiers.items())},
        "relational": {p: _params_jsonable(c) for p, c in sorted(model.relational.items())},
        "train_meta": model.train_meta,
    }


def save_model(model: WacModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_jsonable(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> WacModel:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unparseable model file {path}: {exc}") from exc
    version = obj.get("version")
    if version != MODEL_FILE_VERSION:
        raise ModelFormatError(
            f"unsupported model file version {version!r} (supported: {MODEL_FILE_VERSION})"
        )
    cfg = obj["config"]
    t = cfg["train"]
    seed = t["seed"]
    train_config = TrainConfig(
        max_epochs=int(t["max_epochs"]),
        adam=clf.AdamConfig(
            learning_rate=t["learning_rate"],
            beta1=t["beta1"],
            beta2=t["beta2"],
            eps=t["eps"],
        ),
        l2_alpha=t["l2_alpha"],
        l1_lambda=t["l1_lambda"],
        tree_max_depth=int(t["tree_max_depth"]),
        min_leaf=int(t["min_leaf"]),
        seed=seed if isinstance(seed, int) else list(seed),
        convergence_tol=t["convergence_tol"],
    )
    sampling = SamplingConfig(
        neg_ratio=int(cfg["sampling"]["neg_ratio"]),
        min_positives=int(cfg["sampling"]["min_positives"]),
        seed=int(cfg["sampling"]["seed"]),
    )
    return WacModel(
        backend=obj["backend"],
        classifiers={w: _params_from_jsonable(p) for w, p in obj["classifiers"].items()},
        relational={p: _params_from_jsonable(v) for p, v in obj["relational"].items()},
        feature_dim=int(obj["feature_dim"]),
        train_meta=obj["train_meta"],
        sampling=sampling,
        train_config=train_config,
        lexicons=lexicons_from_jsonable(cfg["lexicons"]),
    )
