"""Composition strategies for scoring scene objects against expressions.

Two families:

* apply-then-compose: every word classifier scores every object, then the
  per-word probabilities are summed into one score per object;
* compose-then-apply: word classifiers are merged into a single composite
  classifier first (MLP hidden-layer concatenation, MLP warm start, or
  decision-tree grafting), which is then applied to the objects.

Relational expressions ("the ball left of the cup") are scored over
ordered object pairs: the product of the first NP's distribution, a
relational classifier on feature differences, and the second NP's
distribution, maximized over partners (a trellis over pairs).
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifiers as clf
from . import parsing
from .classifiers import MlpParams, TrainConfig, TreeLeaf, TreeSplit
from .data import Dataset, Scene
from .model import (
    BackendMismatchError,
    OOVWordError,
    SamplingConfig,
    WacModel,
    collect_examples,
    sample_negatives,
    stable_word_seed,
)

logger = logging.getLogger(__name__)

STRATEGY_NAMES = (
    "logreg-summed",
    "mlp-summed",
    "mlp-adjnoun-extended",
    "mlp-adjnoun-warmstart",
    "mlp-extended",
    "tree-summed",
    "tree-graft",
    "relational",
)

_STRATEGY_BACKENDS = {
    "logreg-summed": "logreg",
    "mlp-summed": "mlp",
    "mlp-adjnoun-extended": "mlp",
    "mlp-adjnoun-warmstart": "mlp",
    "mlp-extended": "mlp",
    "tree-summed": "tree",
    "tree-graft": "tree",
}

NORM_FLOOR = 1e-12


class CompositionError(Exception):
    pass


@dataclass(frozen=True)
class Strategy:
    """A composition strategy; ``relational`` wraps an NP-level strategy."""

    kind: str
    np_strategy: "Strategy | None" = None

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_NAMES}")


def default_np_strategy(backend: str) -> Strategy:
    """NP-level strategy used inside ``relational``: extended hidden layers
    for MLPs (the strongest pairing), summed predictions otherwise."""
    if backend == "mlp":
        return Strategy("mlp-extended")
    if backend == "tree":
        return Strategy("tree-summed")
    return Strategy("logreg-summed")


def make_strategy(name: str, backend: str) -> Strategy:
    if name == "relational":
        return Strategy("relational", np_strategy=default_np_strategy(backend))
    return Strategy(name)


def validate_strategy(strategy: Strategy, backend: str) -> None:
    if strategy.kind == "relational":
        validate_strategy(strategy.np_strategy or default_np_strategy(backend), backend)
        return
    required = _STRATEGY_BACKENDS[strategy.kind]
    if required != backend:
        raise BackendMismatchError(
            f"strategy {strategy.kind!r} requires the {required!r} backend, "
            f"model is {backend!r}"
        )


@dataclass(eq=False)
class ObjectScores:
    """Nonnegative per-object scores, optionally normalized to sum 1."""

    scores: dict[str, float]
    normalized: bool = False

    def normalize(self) -> "ObjectScores":
        total = max(sum(self.scores.values()), NORM_FLOOR)
        return ObjectScores(
            scores={k: v / total for k, v in self.scores.items()}, normalized=True
        )

    def argmax(self) -> str:
        """Highest-scoring object id; ties go to the earliest entry, which
        follows scene entity order for scores built from a scene."""
        best_id, best = None, -np.inf
        for object_id, value in self.scores.items():
            if value > best:
                best_id, best = object_id, value
        return best_id


def _uniform_scores(scene: Scene) -> ObjectScores:
    n = len(scene.entities)
    return ObjectScores(
        scores={e.object_id: 1.0 / n for e in scene.entities}, normalized=True
    )


def _in_vocab(model: WacModel, words) -> list[str]:
    return [w for w in words if w in model.classifiers]


def compose_summed(model: WacModel, content_words, scene: Scene) -> ObjectScores:
    """score(object) = sum of word fitness over in-vocabulary words;
    out-of-vocabulary words are skipped, and an expression with no usable
    words yields uniform scores."""
    words = _in_vocab(model, content_words)
    if not words:
        return _uniform_scores(scene)
    X = scene.feature_matrix()
    total = np.zeros(len(scene.entities))
    for word in words:
        total += clf.predict_batch(model.classifiers[word], X)
    return ObjectScores(
        scores={e.object_id: float(total[i]) for i, e in enumerate(scene.entities)}
    )


@dataclass(eq=False)
class ResolutionState:
    """Word-by-word accumulation of summed-prediction scores."""

    model: WacModel
    scene: Scene
    scores: dict[str, float] = field(default_factory=dict)
    words_applied: int = 0

    def __post_init__(self):
        if not self.scores:
            self.scores = {e.object_id: 0.0 for e in self.scene.entities}


def incremental_update(state: ResolutionState, word: str) -> ResolutionState:
    """Add one word's fitness to every object; identity for OOV words.
    Commutative and associative over words."""
    if word not in state.model.classifiers:
        return state
    X = state.scene.feature_matrix()
    probs = clf.predict_batch(state.model.classifiers[word], X)
    new_scores = {
        e.object_id: state.scores[e.object_id] + float(probs[i])
        for i, e in enumerate(state.scene.entities)
    }
    return ResolutionState(
        model=state.model,
        scene=state.scene,
        scores=new_scores,
        words_applied=state.words_applied + 1,
    )


@dataclass(frozen=True, eq=False)
class MergedMlp:
    """Hidden layers of constituent word MLPs side by side; the composite
    logit is the mean of the constituent logits, so a single-word merge
    and a self-merge reproduce the original classifier exactly."""

    blocks: tuple[MlpParams, ...]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("MergedMlp needs at least one block")
        dims = {b.w1.shape[1] for b in self.blocks}
        if len(dims) != 1:
            raise ValueError(f"constituent MLPs disagree on feature dim: {dims}")

    def logits(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acc = np.zeros(X.shape[0])
        for block in self.blocks:
            _, l = clf.mlp_forward(block, X)
            acc += l
        return acc / len(self.blocks)

    def predict(self, x) -> float:
        return float(clf.sigmoid(self.logits(x))[0])

    def predict_batch(self, X) -> np.ndarray:
        return clf.sigmoid(self.logits(X))


def merge_mlps(mlps) -> MergedMlp:
    return MergedMlp(blocks=tuple(mlps))


def _merged_scores(merged: MergedMlp, scene: Scene) -> np.ndarray:
    return merged.predict_batch(scene.feature_matrix())


def compose_extended(model: WacModel, content_words, scene: Scene) -> ObjectScores:
    """Whole-expression extended hidden layers: one merged MLP from every
    in-vocabulary word, applied per object."""
    model.require_backend("mlp", "mlp-extended composition")
    words = _in_vocab(model, content_words)
    if not words:
        return _uniform_scores(scene)
    merged = merge_mlps([model.classifiers[w] for w in words])
    probs = _merged_scores(merged, scene)
    return ObjectScores(
        scores={e.object_id: float(probs[i]) for i, e in enumerate(scene.entities)}
    )


def _np_pair_plan(model: WacModel, noun_phrase: parsing.NounPhrase):
    """Split NP tokens into mergeable adj-noun pairs and leftover words,
    given the trained vocabulary."""
    pairs = [
        (a, n_)
        for a, n_ in noun_phrase.adj_noun_pairs
        if a in model.classifiers and n_ in model.classifiers
    ]
    paired_words = {w for pair in pairs for w in pair}
    leftovers = [t for t in noun_phrase.tokens if t not in paired_words]
    return pairs, leftovers


def compose_adj_noun_extended(model: WacModel, parsed, scene: Scene) -> ObjectScores:
    """Each adj-noun pair contributes a two-word merged MLP applied per
    object; every other word contributes its plain fitness; contributions
    are summed.  Accepts a ParsedExpression or a single NounPhrase."""
    model.require_backend("mlp", "adj-noun extended composition")
    segments = parsed.segments if isinstance(parsed, parsing.ParsedExpression) else (parsed,)
    X = scene.feature_matrix()
    total = np.zeros(len(scene.entities))
    contributed = False
    for segment in segments:
        if isinstance(segment, parsing.NounPhrase):
            pairs, leftovers = _np_pair_plan(model, segment)
            for adj, noun in pairs:
                merged = merge_mlps([model.classifiers[adj], model.classifiers[noun]])
                total += merged.predict_batch(X)
                contributed = True
            words = _in_vocab(model, leftovers)
        else:
            words = _in_vocab(model, segment.tokens)
        for word in words:
            total += clf.predict_batch(model.classifiers[word], X)
            contributed = True
    if not contributed:
        return _uniform_scores(scene)
    return ObjectScores(
        scores={e.object_id: float(total[i]) for i, e in enumerate(scene.entities)}
    )


class WarmStartCache:
    """Atomic get-or-train cache for warm-started adj-noun classifiers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], MlpParams] = {}

    def get_or_train(self, key, trainer):
        with self._lock:
            if key not in self._entries:
                self._entries[key] = trainer()
            return self._entries[key]


def warm_start_pair(
    model: WacModel,
    adj: str,
    noun: str,
    dataset: Dataset,
    train_config: TrainConfig | None = None,
    cache: WarmStartCache | None = None,
) -> MlpParams:
    """Resume training the noun's MLP on the adjective's training set
    (fresh optimizer moments), folding both meanings into one classifier."""
    model.require_backend("mlp", "warm-start composition")
    for word in (adj, noun):
        if word not in model.classifiers:
            raise OOVWordError(word)
    train_config = train_config if train_config is not None else model.train_config

    def trainer() -> MlpParams:
        positives, pool = collect_examples(dataset, adj)
        if not positives or not pool:
            raise CompositionError(
                f"no usable training data for adjective {adj!r} in warm start"
            )
        rng = np.random.default_rng(stable_word_seed(model.sampling.seed, adj, "neg"))
        negatives = sample_negatives(
            pool, model.sampling.neg_ratio * len(positives), rng
        )
        return clf.train_mlp(
            positives, negatives, train_config, init=model.classifiers[noun]
        )

    if cache is not None:
        return cache.get_or_train((adj, noun), trainer)
    return trainer()


def compose_adj_noun_warmstart(
    model: WacModel,
    parsed,
    scene: Scene,
    dataset: Dataset,
    train_config: TrainConfig | None = None,
    cache: WarmStartCache | None = None,
) -> ObjectScores:
    """Like adj-noun extended composition, with each pair represented by a
    warm-started single classifier instead of a merged one."""
    model.require_backend("mlp", "warm-start composition")
    segments = parsed.segments if isinstance(parsed, parsing.ParsedExpression) else (parsed,)
    X = scene.feature_matrix()
    total = np.zeros(len(scene.entities))
    contributed = False
    for segment in segments:
        if isinstance(segment, parsing.NounPhrase):
            pairs, leftovers = _np_pair_plan(model, segment)
            for adj, noun in pairs:
                merged = warm_start_pair(model, adj, noun, dataset, train_config, cache)
                total += clf.predict_batch(merged, X)
                contributed = True
            words = _in_vocab(model, leftovers)
        else:
            words = _in_vocab(model, segment.tokens)
        for word in words:
            total += clf.predict_batch(model.classifiers[word], X)
            contributed = True
    if not contributed:
        return _uniform_scores(scene)
    return ObjectScores(
        scores={e.object_id: float(total[i]) for i, e in enumerate(scene.entities)}
    )


# --- decision-tree grafting ----------------------------------------------


def _leaf_paths(node, prefix=()):
    """Preorder (path, leaf) list; paths are tuples of 'L'/'R' moves."""
    if isinstance(node, TreeLeaf):
        return [(prefix, node)]
    return _leaf_paths(node.left, prefix + ("L",)) + _leaf_paths(node.right, prefix + ("R",))


def graft_points(tree) -> tuple[tuple[str, ...], ...]:
    """Paths of the leaves where the next word's tree is inserted: the two
    most probable "true" leaves (probability >= 0.5).  With a single true
    leaf only that one is used; with none, the single most probable leaf,
    so every word still contributes.  Ties prefer preorder position."""
    leaves = _leaf_paths(tree)
    true_leaves = [(path, leaf) for path, leaf in leaves if leaf.probability >= 0.5]
    if true_leaves:
        ranked = sorted(
            range(len(true_leaves)),
            key=lambda i: (-true_leaves[i][1].probability, i),
        )
        return tuple(true_leaves[i][0] for i in ranked[:2])
    best = max(range(len(leaves)), key=lambda i: (leaves[i][1].probability, -i))
    return (leaves[best][0],)


def _replace_at_paths(node, paths, replacement):
    if isinstance(node, TreeLeaf):
        return replacement if () in paths else node
    left_paths = {p[1:] for p in paths if p and p[0] == "L"}
    right_paths = {p[1:] for p in paths if p and p[0] == "R"}
    return TreeSplit(
        feature_index=node.feature_index,
        threshold=node.threshold,
        left=_replace_at_paths(node.left, left_paths, replacement),
        right=_replace_at_paths(node.right, right_paths, replacement),
    )


def graft_trees(trees):
    """Compose word trees by grafting: the last word's tree replaces the
    graft leaves of the one before it, and so on back to the first word.
    The graft pattern is computed once per template tree, then every copy
    of that tree in the composite uses the same pattern."""
    trees = list(trees)
    if not trees:
        raise ValueError("graft_trees needs at least one tree")
    composite = trees[-1]
    for tree in reversed(trees[:-1]):
        points = set(graft_points(tree))
        composite = _replace_at_paths(tree, points, composite)
    return composite


def compose_graft(model: WacModel, content_words, scene: Scene) -> ObjectScores:
    model.require_backend("tree", "tree-graft composition")
    words = _in_vocab(model, content_words)
    if not words:
        return _uniform_scores(scene)
    composite = graft_trees([model.classifiers[w] for w in words])
    probs = clf.predict_batch(composite, scene.feature_matrix())
    return ObjectScores(
        scores={e.object_id: float(probs[i]) for i, e in enumerate(scene.entities)}
    )


# --- relational composition ----------------------------------------------


def _as_words(segment_or_words) -> tuple[str, ...]:
    if isinstance(segment_or_words, parsing.ParsedExpression):
        return segment_or_words.content_words()
    if isinstance(segment_or_words, parsing.NounPhrase):
        return segment_or_words.tokens
    return tuple(segment_or_words)


def _as_parseable(segment_or_words, model: WacModel):
    """ParsedExpression or NounPhrase for the adj-noun strategies; plain
    word sequences get their pairs re-extracted from the model lexicons."""
    if isinstance(segment_or_words, (parsing.ParsedExpression, parsing.NounPhrase)):
        return segment_or_words
    words = tuple(segment_or_words)
    return parsing.NounPhrase(
        tokens=words,
        adj_noun_pairs=parsing.extract_adj_noun_pairs(words, model.lexicons),
    )


def _compose_np(
    model: WacModel,
    segment_or_words,
    scene: Scene,
    strategy: Strategy,
    dataset: Dataset | None = None,
    cache: WarmStartCache | None = None,
) -> ObjectScores:
    kind = strategy.kind
    if kind in ("logreg-summed", "mlp-summed", "tree-summed"):
        return compose_summed(model, _as_words(segment_or_words), scene)
    if kind == "mlp-extended":
        return compose_extended(model, _as_words(segment_or_words), scene)
    if kind == "mlp-adjnoun-extended":
        return compose_adj_noun_extended(model, _as_parseable(segment_or_words, model), scene)
    if kind == "mlp-adjnoun-warmstart":
        if dataset is None:
            raise CompositionError("warm-start composition needs the training dataset")
        return compose_adj_noun_warmstart(
            model, _as_parseable(segment_or_words, model), scene, dataset, None, cache
        )
    if kind == "tree-graft":
        return compose_graft(model, _as_words(segment_or_words), scene)
    raise CompositionError(f"strategy {kind!r} cannot compose a noun phrase")


def _first_relation(parsed: parsing.ParsedExpression):
    """(np1, relation, np2) around the first relational segment, or None.
    Later relations are not scored; their tokens already sit in NP2's tail
    only when demoted by the parser, otherwise they are plain words."""
    segments = parsed.segments
    for i, segment in enumerate(segments):
        if isinstance(segment, parsing.RelPhrase):
            return segments[i - 1], segment, segments[i + 1]
    return None


def train_relational(
    model: WacModel,
    dataset: Dataset,
    np_strategy: Strategy | None = None,
    sampling: SamplingConfig | None = None,
    train_config: TrainConfig | None = None,
) -> dict:
    """Train one pair-fitness classifier per relational phrase.

    For every training expression with a relation, the positive example is
    features(gold target) - features(predicted landmark), the landmark being
    the argmax of the second NP's composed distribution (it is never
    annotated).  Negatives are difference vectors of random ordered pairs
    drawn from scenes of expressions without that relation.  Phrases under
    the usual positive-count filter are dropped.  Classifiers land in
    ``model.relational`` and are also returned.
    """
    sampling = sampling if sampling is not None else model.sampling
    train_config = train_config if train_config is not None else model.train_config
    np_strategy = np_strategy if np_strategy is not None else default_np_strategy(model.backend)
    validate_strategy(np_strategy, model.backend)
    positives: dict[str, list[np.ndarray]] = {}
    others: dict[str, list[int]] = {}
    parsed_all = [parsing.parse(list(r.tokens), model.lexicons) for r in dataset.refexps]
    phrases = sorted(
        {seg.phrase for p in parsed_all for seg in p.relations}
    )
    if not phrases:
        model.train_meta["relational"] = {}
        return {}
    for phrase in phrases:
        positives[phrase] = []
        others[phrase] = []
    for idx, (refexp, parsed) in enumerate(zip(dataset.refexps, parsed_all)):
        triple = _first_relation(parsed)
        scene = dataset.scenes[refexp.scene_id]
        phrase_here = triple[1].phrase if triple is not None else None
        if triple is not None:
            np1, rel, np2 = triple
            target = scene.entity(refexp.target_object_id)
            np2_scores = _compose_np(model, np2, scene, np_strategy, dataset)
            landmark = scene.entity(np2_scores.argmax())
            positives[phrase_here].append(target.features - landmark.features)
        for phrase in phrases:
            if phrase != phrase_here:
                others[phrase].append(idx)
    trained: dict = {}
    meta: dict = {}
    for phrase in phrases:
        pos = positives[phrase]
        if len(pos) < sampling.min_positives:
            logger.info(
                "relational phrase %r has %d positives, below the filter; skipped",
                phrase,
                len(pos),
            )
            continue
        rng = np.random.default_rng(stable_word_seed(sampling.seed, phrase, "rel-neg"))
        pool_exprs = others[phrase]
        if not pool_exprs:
            logger.warning("relational phrase %r has no negative pool; skipped", phrase)
            continue
        n_neg = sampling.neg_ratio * len(pos)
        negatives = []
        expr_picks = rng.choice(len(pool_exprs), size=n_neg, replace=n_neg > len(pool_exprs))
        for pick in expr_picks:
            refexp = dataset.refexps[pool_exprs[pick]]
            scene = dataset.scenes[refexp.scene_id]
            n_ent = len(scene.entities)
            i, j = rng.choice(n_ent, size=2, replace=False)
            negatives.append(scene.entities[i].features - scene.entities[j].features)
        word_config = replace(
            train_config, seed=stable_word_seed(train_config.seed, phrase, "rel-init")
        )
        if model.backend == "logreg":
            trained[phrase] = clf.train_logreg(pos, negatives, word_config)
        elif model.backend == "mlp":
            trained[phrase] = clf.train_mlp(pos, negatives, word_config)
        else:
            trained[phrase] = clf.train_tree(pos, negatives, word_config)
        meta[phrase] = {"n_pos": len(pos), "n_neg": len(negatives)}
    model.relational.update(trained)
    model.train_meta["relational"] = meta
    return trained


def resolve_relational(
    model: WacModel,
    parsed: parsing.ParsedExpression,
    scene: Scene,
    np_strategy: Strategy | None = None,
    dataset: Dataset | None = None,
    cache: WarmStartCache | None = None,
) -> ObjectScores:
    """Trellis scoring over ordered object pairs.

    score(i, j) = P1(i) * p_rel(x_i - x_j) * P2(j) for i != j, with P1 and
    P2 the normalized compositions of the two noun phrases; an object's
    score is its best pairing, and the argmax is the predicted referent.
    Falls back to composing all content words when the relation has no
    trained classifier, and to NP1 alone when the scene has one object.
    """
    np_strategy = np_strategy if np_strategy is not None else default_np_strategy(model.backend)
    triple = _first_relation(parsed)
    if triple is None:
        return _compose_np(model, parsed.content_words(), scene, np_strategy, dataset, cache)
    np1, rel, np2 = triple
    relation = model.relational.get(rel.phrase)
    if relation is None:
        return _compose_np(model, parsed.content_words(), scene, np_strategy, dataset, cache)
    if len(scene.entities) < 2:
        return _compose_np(model, np1, scene, np_strategy, dataset, cache)
    p1 = _compose_np(model, np1, scene, np_strategy, dataset, cache).normalize()
    p2 = _compose_np(model, np2, scene, np_strategy, dataset, cache).normalize()
    entities = scene.entities
    best = {e.object_id: 0.0 for e in entities}
    for i, ent_i in enumerate(entities):
        p1_i = p1.scores[ent_i.object_id]
        for j, ent_j in enumerate(entities):
            if i == j:
                continue
            fit = clf.predict(relation, ent_i.features - ent_j.features)
            score = p1_i * fit * p2.scores[ent_j.object_id]
            if score > best[ent_i.object_id]:
                best[ent_i.object_id] = score
    return ObjectScores(scores=best)


def resolve(
    model: WacModel,
    tokens,
    scene: Scene,
    strategy: Strategy,
    dataset: Dataset | None = None,
    cache: WarmStartCache | None = None,
):
    """Score every object and return (predicted object_id, ObjectScores).
    Ties break toward earlier entities in the scene."""
    validate_strategy(strategy, model.backend)
    parsed = parsing.parse(list(tokens), model.lexicons)
    if strategy.kind == "relational":
        scores = resolve_relational(
            model, parsed, scene, strategy.np_strategy, dataset, cache
        )
    elif strategy.kind in ("mlp-adjnoun-extended", "mlp-adjnoun-warmstart"):
        scores = _compose_np(model, parsed, scene, strategy, dataset, cache)
    else:
        scores = _compose_np(model, parsed.content_words(), scene, strategy, dataset, cache)
    return scores.argmax(), scores
