import numpy as np
import pytest

from wac import composition, parsing, scenegen
from wac.classifiers import (
    AdamConfig,
    LogRegParams,
    MlpParams,
    TrainConfig,
    TreeLeaf,
    TreeSplit,
    glorot_init,
    mlp_forward,
    predict,
    sigmoid,
)
from wac.composition import (
    MergedMlp,
    ObjectScores,
    ResolutionState,
    Strategy,
    WarmStartCache,
    compose_adj_noun_extended,
    compose_summed,
    graft_points,
    graft_trees,
    incremental_update,
    merge_mlps,
    resolve,
    resolve_relational,
    train_relational,
    warm_start_pair,
)
from wac.data import Dataset, RefExpInstance, Scene, with_positional_features
from wac.model import BackendMismatchError, OOVWordError, SamplingConfig, train_model
from tests.conftest import FAST_TRAIN


def _scene_of(dataset, refexp):
    return dataset.scenes[refexp.scene_id]


# --- summed / incremental ---------------------------------------------------


def test_single_word_matches_fitness_ranking(mlp_model, small_test):
    refexp = small_test.refexps[0]
    scene = _scene_of(small_test, refexp)
    word = next(w for w in refexp.tokens if w in mlp_model.classifiers)
    scores = compose_summed(mlp_model, [word], scene)
    from wac.model import word_fitness

    for ent in scene.entities:
        assert scores.scores[ent.object_id] == pytest.approx(
            word_fitness(mlp_model, word, ent), abs=1e-12
        )


def test_empty_words_give_uniform(mlp_model, small_test):
    scene = next(iter(small_test.scenes.values()))
    scores = compose_summed(mlp_model, [], scene)
    values = list(scores.scores.values())
    assert values == [values[0]] * len(values)
    assert scores.normalized


def test_incremental_equals_batch_on_prefixes(mlp_model, small_test):
    for refexp in small_test.refexps[:20]:
        scene = _scene_of(small_test, refexp)
        state = ResolutionState(model=mlp_model, scene=scene)
        words = [t for t in refexp.tokens if t not in mlp_model.lexicons.stopwords]
        for k, word in enumerate(words, start=1):
            state = incremental_update(state, word)
            batch = compose_summed(mlp_model, words[:k], scene)
            in_vocab = [w for w in words[:k] if w in mlp_model.classifiers]
            if not in_vocab:
                continue  # batch returns uniform before any word applies
            for oid, value in batch.scores.items():
                assert abs(state.scores[oid] - value) < 1e-9


def test_incremental_oov_is_identity(mlp_model, small_test):
    scene = next(iter(small_test.scenes.values()))
    state = ResolutionState(model=mlp_model, scene=scene)
    state2 = incremental_update(state, "zzzunknown")
    assert state2.scores == state.scores


def test_incremental_is_order_invariant(mlp_model, small_test, rng):
    scene = next(iter(small_test.scenes.values()))
    words = list(mlp_model.classifiers)[:5]
    final = {}
    for tag, order in (("fwd", words), ("rev", words[::-1])):
        state = ResolutionState(model=mlp_model, scene=scene)
        for word in order:
            state = incremental_update(state, word)
        final[tag] = state.scores
    for oid in final["fwd"]:
        assert final["fwd"][oid] == pytest.approx(final["rev"][oid], abs=1e-9)


# --- MLP merging --------------------------------------------------------------


def test_merge_single_is_identity(rng):
    mlp = glorot_init(6, seed=1)
    merged = merge_mlps([mlp])
    for x in rng.normal(size=(20, 6)):
        assert merged.predict(x) == predict(mlp, x)


def test_self_merge_is_identity(rng):
    mlp = glorot_init(5, seed=2)
    merged = merge_mlps([mlp, mlp])
    for x in rng.normal(size=(20, 5)):
        assert abs(merged.predict(x) - predict(mlp, x)) < 1e-12


def test_merge_equals_mean_logit_oracle(rng):
    mlps = [glorot_init(4, seed=s) for s in range(3)]
    merged = merge_mlps(mlps)
    for x in rng.normal(size=(10, 4)):
        # independent oracle: run each constituent forward pass, average
        logits = [mlp_forward(m, x[None, :])[1][0] for m in mlps]
        expected = sigmoid(np.atleast_1d(np.mean(logits)))[0]
        assert merged.predict(x) == pytest.approx(expected, abs=1e-12)


def test_merge_rejects_mixed_dims():
    with pytest.raises(ValueError):
        merge_mlps([glorot_init(3, seed=0), glorot_init(4, seed=0)])


def test_adj_noun_extended_without_pairs_equals_summed(mlp_model, small_test):
    scene = next(iter(small_test.scenes.values()))
    words = [w for w in list(mlp_model.classifiers) if w in mlp_model.lexicons.nouns][:3]
    np_seg = parsing.NounPhrase(tokens=tuple(words), adj_noun_pairs=())
    left = compose_adj_noun_extended(mlp_model, np_seg, scene)
    right = compose_summed(mlp_model, words, scene)
    for oid in left.scores:
        assert left.scores[oid] == pytest.approx(right.scores[oid], abs=1e-12)


def test_adj_noun_extended_hand_assembled(mlp_model, small_test):
    adjs = [w for w in mlp_model.classifiers if w in mlp_model.lexicons.adjectives][:2]
    noun = next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.nouns)
    if len(adjs) < 2:
        pytest.skip("need two adjectives in the small model")
    scene = next(iter(small_test.scenes.values()))
    np_seg = parsing.NounPhrase(
        tokens=(adjs[0], adjs[1], noun),
        adj_noun_pairs=((adjs[0], noun), (adjs[1], noun)),
    )
    scores = compose_adj_noun_extended(mlp_model, np_seg, scene)
    for ent in scene.entities:
        expected = 0.0
        for adj in adjs:
            merged = merge_mlps([mlp_model.classifiers[adj], mlp_model.classifiers[noun]])
            expected += merged.predict(ent.features)
        assert scores.scores[ent.object_id] == pytest.approx(expected, abs=1e-12)


# --- warm start ---------------------------------------------------------------


def test_warm_start_zero_epochs_is_noun_classifier(mlp_model, small_train):
    adj = next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.adjectives)
    noun = next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.nouns)
    config = TrainConfig(max_epochs=0, seed=0)
    out = warm_start_pair(mlp_model, adj, noun, small_train, config)
    base = mlp_model.classifiers[noun]
    np.testing.assert_array_equal(out.w1, base.w1)
    np.testing.assert_array_equal(out.w2, base.w2)


def test_warm_start_is_deterministic(mlp_model, small_train):
    adj = next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.adjectives)
    noun = next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.nouns)
    config = TrainConfig(max_epochs=50, seed=3)
    a = warm_start_pair(mlp_model, adj, noun, small_train, config)
    b = warm_start_pair(mlp_model, adj, noun, small_train, config)
    np.testing.assert_array_equal(a.w1, b.w1)


def test_warm_start_oov_signals(mlp_model, small_train):
    noun = next(iter(mlp_model.classifiers))
    with pytest.raises(OOVWordError):
        warm_start_pair(mlp_model, "nonword", noun, small_train)


def test_warm_start_cache_trains_once(mlp_model, small_train):
    calls = []
    cache = WarmStartCache()

    real = warm_start_pair(mlp_model, "red", next(w for w in mlp_model.classifiers if w in mlp_model.lexicons.nouns), small_train, TrainConfig(max_epochs=5, seed=0))

    def trainer():
        calls.append(1)
        return real

    for _ in range(3):
        out = cache.get_or_train(("red", "ball"), trainer)
    assert len(calls) == 1
    assert out is real


def test_warm_start_pair_prefers_pair_objects(mlp_model, small_train):
    # "red ball" should score a red ball above a blue ball and a red box.
    adj, noun = "red", "ball"
    if adj not in mlp_model.classifiers or noun not in mlp_model.classifiers:
        pytest.skip("fixture vocabulary lacks red/ball")
    pair_clf = warm_start_pair(
        mlp_model, adj, noun, small_train,
        TrainConfig(max_epochs=300, adam=AdamConfig(learning_rate=0.01), l2_alpha=0.01, seed=0),
    )
    found = {}
    for scene in small_train.scenes.values():
        for ent in scene.entities:
            colors = ent.attributes["color"]
            kind = ent.attributes["category"]
            if "red" in colors and kind == "ball":
                found.setdefault("red-ball", ent)
            elif "blue" in colors and kind == "ball":
                found.setdefault("blue-ball", ent)
            elif "red" in colors and kind == "box":
                found.setdefault("red-box", ent)
    if len(found) < 3:
        pytest.skip("fixture dataset lacks the contrast objects")
    p = {k: predict(pair_clf, e.features) for k, e in found.items()}
    assert p["red-ball"] > p["blue-ball"]
    assert p["red-ball"] > p["red-box"]


# --- tree grafting --------------------------------------------------------------


def _leaf(p, n):
    return TreeLeaf(n_pos=p, n_neg=n)


def test_graft_single_tree_identity(rng, tree_model):
    word = next(iter(tree_model.classifiers))
    tree = tree_model.classifiers[word]
    composite = graft_trees([tree])
    for x in rng.normal(size=(30, tree_model.feature_dim)):
        assert predict(composite, x) == predict(tree, x)


def test_graft_fig_shape_hand_built():
    # "brown": root splits f0 at 0.5; its true leaves (p >= 0.5) are the
    # two right-side leaves with p = 0.8 and 0.6.  Grafting "dog" must
    # replace exactly those two leaves with dog's root.
    brown = TreeSplit(
        feature_index=0,
        threshold=0.5,
        left=_leaf(1, 9),  # p = 0.1, stays a leaf
        right=TreeSplit(
            feature_index=1,
            threshold=0.3,
            left=_leaf(8, 2),  # p = 0.8, graft point
            right=_leaf(6, 4),  # p = 0.6, graft point
        ),
    )
    dog = TreeSplit(feature_index=2, threshold=0.7, left=_leaf(0, 5), right=_leaf(9, 1))
    composite = graft_trees([brown, dog])
    # Left of brown's root: untouched leaf.
    assert composite.left == _leaf(1, 9)
    # Both former true leaves now hold a copy of dog.
    assert composite.right.left == dog
    assert composite.right.right == dog
    # Traversal: x falls to brown-true region, then dog decides.
    x_true_dog = np.array([0.9, 0.1, 0.9])
    assert predict(composite, x_true_dog) == 0.9
    x_true_nodog = np.array([0.9, 0.1, 0.1])
    assert predict(composite, x_true_nodog) == 0.0
    x_false = np.array([0.1, 0.0, 0.0])
    assert predict(composite, x_false) == 0.1


def test_graft_points_single_true_leaf():
    tree = TreeSplit(feature_index=0, threshold=0.0, left=_leaf(9, 1), right=_leaf(1, 9))
    assert graft_points(tree) == (("L",),)


def test_graft_points_no_true_leaf_uses_best():
    tree = TreeSplit(feature_index=0, threshold=0.0, left=_leaf(1, 9), right=_leaf(2, 8))
    assert graft_points(tree) == (("R",),)


def test_graft_depth_bound(tree_model, rng):
    from wac.classifiers import tree_depth

    words = list(tree_model.classifiers)[:4]
    trees = [tree_model.classifiers[w] for w in words]
    composite = graft_trees(trees)
    assert tree_depth(composite) <= sum(max(tree_depth(t), 1) for t in trees)
    assert tree_depth(composite) <= 2 * len(trees)


# --- relational ---------------------------------------------------------------


def test_relational_filter_matches_word_filter(gen_lexicons):
    # 4 occurrences of a relation phrase -> no classifier for it.
    ds = scenegen.generate_dataset(
        scenegen.GenConfig(n_scenes=60, seed=21, relation_fraction=0.25)
    )
    model = train_model(ds, "logreg", SamplingConfig(seed=0), FAST_TRAIN, gen_lexicons)
    train_relational(model, ds)
    for phrase, meta in model.train_meta["relational"].items():
        assert meta["n_pos"] >= 5
        assert meta["n_neg"] == 5 * meta["n_pos"]


def test_relational_left_of_learns_direction(mlp_model, small_train):
    if "left of" not in mlp_model.relational:
        pytest.skip("fixture model has no left-of classifier")
    clf = mlp_model.relational["left of"]
    correct = 0
    total = 0
    for scene in list(small_train.scenes.values())[:40]:
        for a in scene.entities[:3]:
            for b in scene.entities[:3]:
                if a is b:
                    continue
                d = a.features - b.features
                truth = scenegen.relation_holds("left of", a, b)
                other = scenegen.relation_holds("right of", a, b)
                if not (truth or other):
                    continue
                p_fwd = predict(clf, d)
                p_rev = predict(clf, -d)
                total += 1
                correct += int((p_fwd > p_rev) == truth)
    assert total > 20
    assert correct / total > 0.8


def _trellis_oracle(model, p1, p2, relation, scene):
    best = {}
    for i, ei in enumerate(scene.entities):
        candidates = []
        for j, ej in enumerate(scene.entities):
            if i == j:
                continue
            fit = predict(relation, ei.features - ej.features)
            candidates.append(p1.scores[ei.object_id] * fit * p2.scores[ej.object_id])
        best[ei.object_id] = max(candidates) if candidates else 0.0
    return best


def test_trellis_matches_bruteforce_enumeration(mlp_model, small_test):
    strategy = composition.default_np_strategy("mlp")
    checked = 0
    for refexp in small_test.refexps:
        parsed = parsing.parse(list(refexp.tokens), mlp_model.lexicons)
        if not parsed.relations:
            continue
        triple = composition._first_relation(parsed)
        if triple[1].phrase not in mlp_model.relational:
            continue
        scene = _scene_of(small_test, refexp)
        scores = resolve_relational(mlp_model, parsed, scene, strategy)
        p1 = composition._compose_np(mlp_model, triple[0], scene, strategy).normalize()
        p2 = composition._compose_np(mlp_model, triple[2], scene, strategy).normalize()
        expected = _trellis_oracle(
            mlp_model, p1, p2, mlp_model.relational[triple[1].phrase], scene
        )
        assert scores.scores == expected
        assert scores.argmax() == max(expected, key=lambda k: expected[k])
        checked += 1
        if checked >= 20:
            break
    assert checked >= 10


def test_uninformative_relation_reduces_to_np_product(mlp_model, small_test):
    # A constant relation classifier must leave argmax at the best
    # P1(i) * max_j P2(j) pairing (computed by brute force).
    refexp = next(
        r
        for r in small_test.refexps
        if parsing.parse(list(r.tokens), mlp_model.lexicons).relations
    )
    parsed = parsing.parse(list(refexp.tokens), mlp_model.lexicons)
    scene = _scene_of(small_test, refexp)
    triple = composition._first_relation(parsed)
    model_copy = composition.WacModel(
        backend=mlp_model.backend,
        classifiers=mlp_model.classifiers,
        relational={triple[1].phrase: MlpParams(
            w1=np.zeros((3, mlp_model.feature_dim)), b1=np.zeros(3), w2=np.zeros(3), b2=0.0
        )},
        feature_dim=mlp_model.feature_dim,
        train_meta={},
        sampling=mlp_model.sampling,
        train_config=mlp_model.train_config,
        lexicons=mlp_model.lexicons,
    )
    strategy = composition.default_np_strategy("mlp")
    scores = resolve_relational(model_copy, parsed, scene, strategy)
    p1 = composition._compose_np(model_copy, triple[0], scene, strategy).normalize()
    p2 = composition._compose_np(model_copy, triple[2], scene, strategy).normalize()
    expected = {}
    for i, ei in enumerate(scene.entities):
        others = [p2.scores[ej.object_id] for j, ej in enumerate(scene.entities) if j != i]
        expected[ei.object_id] = p1.scores[ei.object_id] * 0.5 * max(others)
    assert scores.argmax() == max(expected, key=lambda k: expected[k])


def test_relation_disambiguates_twins_at_zero_noise(gen_lexicons):
    ds = scenegen.generate_dataset(
        scenegen.GenConfig(n_scenes=200, seed=31, relation_fraction=0.5, noise_sigma=0.0)
    )
    model = train_model(ds, "mlp", SamplingConfig(seed=1), FAST_TRAIN, gen_lexicons)
    train_relational(model, ds)
    strategy = composition.make_strategy("relational", "mlp")
    test_ds = scenegen.generate_dataset(
        scenegen.GenConfig(
            n_scenes=60, seed=31, relation_fraction=1.0, noise_sigma=0.0, scene_offset=200
        ),
        split="test",
    )
    hits = 0
    total = 0
    for refexp in test_ds.refexps:
        parsed = parsing.parse(list(refexp.tokens), model.lexicons)
        if parsed.relations[0].phrase not in model.relational:
            continue
        predicted, _ = resolve(model, refexp.tokens, _scene_of(test_ds, refexp), strategy)
        hits += int(predicted == refexp.target_object_id)
        total += 1
    assert total >= 20
    assert hits / total >= 0.8


# --- resolve dispatch ------------------------------------------------------------


def test_resolve_two_entity_discriminating_word(mlp_model, small_test):
    refexp = small_test.refexps[0]
    scene = _scene_of(small_test, refexp)
    strategy = Strategy("mlp-summed")
    predicted, scores = resolve(mlp_model, refexp.tokens, scene, strategy)
    batch = compose_summed(
        mlp_model,
        [t for t in refexp.tokens if t not in mlp_model.lexicons.stopwords],
        scene,
    )
    assert predicted == batch.argmax()
    assert scores.scores == batch.scores


def test_resolve_all_oov_falls_back_to_first_entity(mlp_model, small_test):
    scene = next(iter(small_test.scenes.values()))
    predicted, scores = resolve(mlp_model, ("qqq", "zzz"), scene, Strategy("mlp-summed"))
    assert predicted == scene.entities[0].object_id
    values = list(scores.scores.values())
    assert values == [values[0]] * len(values)


def test_resolve_validates_backend(tree_model, small_test):
    scene = next(iter(small_test.scenes.values()))
    with pytest.raises(BackendMismatchError):
        resolve(tree_model, ("ball",), scene, Strategy("mlp-extended"))


def test_strategy_names_validate():
    with pytest.raises(ValueError):
        Strategy("bogus-strategy")


def test_normalize_preserves_argmax(mlp_model, small_test):
    refexp = small_test.refexps[1]
    scene = _scene_of(small_test, refexp)
    words = [t for t in refexp.tokens if t in mlp_model.classifiers]
    scores = compose_summed(mlp_model, words, scene)
    normalized = scores.normalize()
    assert normalized.normalized
    assert abs(sum(normalized.scores.values()) - 1.0) < 1e-9
    assert normalized.argmax() == scores.argmax()
