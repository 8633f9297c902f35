import numpy as np
import pytest

from wac import parsing, scenegen
from wac.data import save_dataset, with_positional_features
from wac.scenegen import (
    GenConfig,
    GenLexicon,
    NoDiscriminatingExpressionError,
    generate_dataset,
    relation_holds,
    render_expression,
    resolve_by_attributes,
)


def _bytes_of(ds, tmp_path, tag):
    save_dataset(ds, tmp_path / f"s{tag}.jsonl", tmp_path / f"r{tag}.jsonl")
    return (
        (tmp_path / f"s{tag}.jsonl").read_bytes(),
        (tmp_path / f"r{tag}.jsonl").read_bytes(),
    )


def test_same_seed_same_bytes(tmp_path):
    config = GenConfig(n_scenes=25, seed=42, relation_fraction=0.4)
    a = _bytes_of(generate_dataset(config), tmp_path, "a")
    b = _bytes_of(generate_dataset(config), tmp_path, "b")
    assert a == b


def test_different_seeds_differ(tmp_path):
    a = _bytes_of(generate_dataset(GenConfig(n_scenes=10, seed=1)), tmp_path, "a")
    b = _bytes_of(generate_dataset(GenConfig(n_scenes=10, seed=2)), tmp_path, "b")
    assert a != b


def test_relation_fraction_zero_gives_attribute_only(gen_lexicons):
    ds = generate_dataset(GenConfig(n_scenes=30, seed=3, relation_fraction=0.0, objects_per_scene=2))
    for refexp in ds.refexps:
        parsed = parsing.parse(list(refexp.tokens), gen_lexicons)
        assert not parsed.relations
        assert len(parsed.segments) == 1


def test_relation_fraction_one_gives_exactly_one_relation(gen_lexicons):
    ds = generate_dataset(GenConfig(n_scenes=25, seed=4, relation_fraction=1.0))
    for refexp in ds.refexps:
        parsed = parsing.parse(list(refexp.tokens), gen_lexicons)
        assert len(parsed.relations) == 1
        assert parsed.relations[0].phrase in scenegen.GENERATOR_RELATIONS


def test_noise_free_oracle_is_perfect(gen_lexicons):
    ds = generate_dataset(GenConfig(n_scenes=40, seed=6, noise_sigma=0.0, relation_fraction=0.5))
    for refexp in ds.refexps:
        scene = ds.scenes[refexp.scene_id]
        assert resolve_by_attributes(refexp.tokens, scene, gen_lexicons) == refexp.target_object_id


def test_oracle_is_noise_independent(gen_lexicons):
    # Attributes are ground truth; feature noise must not affect the oracle.
    ds = generate_dataset(GenConfig(n_scenes=30, seed=6, noise_sigma=0.5, relation_fraction=0.5))
    hits = sum(
        resolve_by_attributes(r.tokens, ds.scenes[r.scene_id], gen_lexicons)
        == r.target_object_id
        for r in ds.refexps
    )
    assert hits == len(ds.refexps)


def test_emitted_relations_are_geometrically_true(gen_lexicons):
    ds = generate_dataset(GenConfig(n_scenes=30, seed=8, relation_fraction=1.0))
    for refexp in ds.refexps:
        scene = ds.scenes[refexp.scene_id]
        parsed = parsing.parse(list(refexp.tokens), gen_lexicons)
        rel = parsed.relations[0]
        np2 = parsed.segments[list(parsed.segments).index(rel) + 1]
        target = scene.entity(refexp.target_object_id)
        landmarks = [
            e
            for e in scene.entities
            if e is not target and set(np2.tokens) <= scenegen._attribute_words(e)
        ]
        assert any(relation_holds(rel.phrase, target, lm) for lm in landmarks)


def _toy_entity(object_id, bbox, category, color, size):
    return with_positional_features(
        object_id,
        np.zeros(4),
        bbox,
        {"category": category, "color": [color], "size": size},
    )


def test_twins_force_relational_expression():
    # Two identical balls and a distinctive cup landmark: only a relation
    # can single out the left twin.
    scene = scenegen.Scene(
        scene_id="toy",
        entities=(
            _toy_entity("left", (0.05, 0.4, 0.25, 0.6), "ball", "red", "small"),
            _toy_entity("right", (0.7, 0.4, 0.9, 0.6), "ball", "red", "small"),
            _toy_entity("cup", (0.4, 0.4, 0.6, 0.6), "cup", "blue", "large"),
        ),
    )
    config = GenConfig(n_scenes=1, seed=0)
    tokens = render_expression(scene.entities[0], scene, config, np.random.default_rng(0))
    assert any(
        phrase in " ".join(tokens) for phrase in scenegen.GENERATOR_RELATIONS
    )
    lexicons = scenegen.parser_lexicons(config.lexicon)
    assert resolve_by_attributes(tokens, scene, lexicons) == "left"


def test_unique_attribute_gives_simple_expression():
    scene = scenegen.Scene(
        scene_id="toy",
        entities=(
            _toy_entity("a", (0.1, 0.1, 0.3, 0.3), "ball", "red", "small"),
            _toy_entity("b", (0.6, 0.6, 0.8, 0.8), "box", "blue", "small"),
        ),
    )
    config = GenConfig(n_scenes=1, seed=0)
    tokens = render_expression(scene.entities[0], scene, config, np.random.default_rng(0))
    assert tokens[0] == "the"
    assert tokens[-1] == "ball"
    assert not any(p in " ".join(tokens) for p in scenegen.GENERATOR_RELATIONS)


def test_undescribable_target_signals_resample():
    # Identical twins with no third object: nothing discriminates them.
    scene = scenegen.Scene(
        scene_id="toy",
        entities=(
            _toy_entity("a", (0.1, 0.1, 0.3, 0.3), "ball", "red", "small"),
            _toy_entity("b", (0.6, 0.6, 0.8, 0.8), "ball", "red", "small"),
        ),
    )
    config = GenConfig(n_scenes=1, seed=0)
    with pytest.raises(NoDiscriminatingExpressionError):
        render_expression(scene.entities[0], scene, config, np.random.default_rng(0))


def test_relation_geometry():
    a = _toy_entity("a", (0.1, 0.4, 0.2, 0.6), "ball", "red", "small")
    b = _toy_entity("b", (0.7, 0.1, 0.8, 0.3), "box", "blue", "small")
    assert relation_holds("left of", a, b)
    assert not relation_holds("right of", a, b)
    assert relation_holds("below", a, b)  # image coords: larger y is lower
    assert relation_holds("above", b, a)
    assert not relation_holds("next to", a, b)
    assert relation_holds("next to", a, a, next_to_threshold=0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"objects_per_scene": 1},
        {"relation_fraction": 1.5},
        {"noise_sigma": -0.1},
        {"objects_per_scene": 2, "relation_fraction": 0.5},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GenConfig(n_scenes=5, **kwargs)


def test_prototypes_do_not_depend_on_scene_count():
    a = scenegen.category_prototypes(GenConfig(n_scenes=1, seed=7))
    b = scenegen.category_prototypes(GenConfig(n_scenes=99, seed=7, scene_offset=500))
    for noun in a:
        np.testing.assert_array_equal(a[noun], b[noun])


def test_hue_probe_sweep_shape():
    sweep = scenegen.hue_probe_sweep(50, prototype_dim=32)
    assert sweep.values.shape == (50,)
    assert sweep.vectors.shape == (50, 32 + 4 + 7)
    # prototype block neutral, positional block fixed
    assert np.all(sweep.vectors[:, :32] == 0)
    assert len(np.unique(sweep.vectors[:, -7:], axis=0)) == 1
