"""Deterministic synthetic scene and referring-expression generator.

Scenes place objects on a jittered grid; each object gets ground-truth
attributes (category, color word, size word, grid cell) and a feature
vector [category prototype | RGB | size scalar] plus Gaussian noise.
Every emitted expression is verified against a brute-force attribute
matcher, so at any noise level the gold target is recoverable from
attributes alone.  Expressions are simple ("the large red ball") unless
the scene contains a deliberately planted attribute twin, in which case
a geometrically true relational phrase disambiguates ("the ball left of
the blue cup").
"""
from __future__ import annotations

import colorsys
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import parsing
from .data import Dataset, Entity, RefExpInstance, Scene, with_positional_features

GENERATOR_RELATIONS = ("left of", "right of", "above", "below", "next to")

# Color vocabulary with synonym families: several surface words can name
# the same hue (red/crimson/scarlet), the way close synonyms denote the
# same visual property.  An object colored with a family hue is describable
# by any family member, and the per-word classifiers of a family see the
# same feature distribution.  Hues sit on the six corners of the RGB cube,
# where a small tanh network separates every hue from the rest.
DEFAULT_COLOR_HUES = {
    "red": 0.0,
    "crimson": 0.0,
    "scarlet": 0.0,
    "ruby": 0.0,
    "cherry": 0.0,
    "yellow": 1.0 / 6,
    "gold": 1.0 / 6,
    "amber": 1.0 / 6,
    "green": 1.0 / 3,
    "emerald": 1.0 / 3,
    "jade": 1.0 / 3,
    "cyan": 0.5,
    "teal": 0.5,
    "aqua": 0.5,
    "blue": 2.0 / 3,
    "navy": 2.0 / 3,
    "cobalt": 2.0 / 3,
    "azure": 2.0 / 3,
    "sapphire": 2.0 / 3,
    "magenta": 5.0 / 6,
    "fuchsia": 5.0 / 6,
    "pink": 5.0 / 6,
}

DEFAULT_NOUNS = (
    "cat",
    "dog",
    "horse",
    "cow",
    "car",
    "truck",
    "bus",
    "van",
    "ball",
    "box",
    "cup",
    "lamp",
)

DEFAULT_SIZES = {"small": 0.3, "large": 0.8}


class GenerationError(Exception):
    """Scene generation exhausted its retry budget."""


class NoDiscriminatingExpressionError(Exception):
    """No expression separates the target from every distractor; the
    caller should resample the scene."""


@dataclass(frozen=True)
class GenLexicon:
    nouns: tuple[str, ...] = DEFAULT_NOUNS
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLOR_HUES))
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    relations: tuple[str, ...] = GENERATOR_RELATIONS

    def color_rgb(self, word: str) -> tuple[float, float, float]:
        return colorsys.hsv_to_rgb(self.colors[word], 1.0, 1.0)

    def hue_groups(self) -> list[list[str]]:
        """Color words grouped by shared hue, in lexicon order."""
        groups: dict[float, list[str]] = {}
        for word, hue in self.colors.items():
            groups.setdefault(hue, []).append(word)
        return list(groups.values())


@dataclass(frozen=True)
class GenConfig:
    n_scenes: int
    objects_per_scene: int = 8
    noise_sigma: float = 0.05
    seed: int = 0
    lexicon: GenLexicon = field(default_factory=GenLexicon)
    relation_fraction: float = 0.25
    prototype_dim: int = 32
    next_to_threshold: float = 0.25
    scene_offset: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if self.objects_per_scene < 2:
            raise ValueError("objects_per_scene must be >= 2")
        if not 0.0 <= self.relation_fraction <= 1.0:
            raise ValueError("relation_fraction must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.relation_fraction > 0 and self.objects_per_scene < 3:
            raise ValueError(
                "relational expressions need at least 3 objects per scene"
            )
        if not (self.lexicon.nouns and self.lexicon.colors and self.lexicon.sizes):
            raise ValueError("lexicon must provide nouns, colors, and sizes")

    @property
    def raw_feature_dim(self) -> int:
        return self.prototype_dim + 4  # prototype | r g b | size scalar


def _rng(seed: int, *tags) -> np.random.Generator:
    material = [seed & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            material.append(zlib.crc32(tag.encode("utf-8")))
        else:
            material.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(material)


def category_prototypes(config: GenConfig) -> dict[str, np.ndarray]:
    """Fixed random unit vectors per noun; a function of (seed, noun) only,
    so all splits generated from one seed share them."""
    protos = {}
    for noun in config.lexicon.nouns:
        rng = _rng(config.seed, "prototype", noun)
        v = rng.normal(size=config.prototype_dim)
        protos[noun] = v / np.linalg.norm(v)
    return protos


def bbox_center(bbox) -> tuple[float, float]:
    x1, y1, x2, y2 = bbox
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


def relation_holds(phrase: str, a: Entity, b: Entity, next_to_threshold: float = 0.25) -> bool:
    """Geometric truth of a relational phrase for bbox centers, image
    coordinates (y grows downward)."""
    ax, ay = bbox_center(a.bbox)
    bx, by = bbox_center(b.bbox)
    if phrase == "left of":
        return ax < bx
    if phrase == "right of":
        return ax > bx
    if phrase == "above":
        return ay < by
    if phrase == "below":
        return ay > by
    if phrase == "next to":
        return math.hypot(ax - bx, ay - by) < next_to_threshold
    return False


def parser_lexicons(lexicon: GenLexicon) -> parsing.Lexicons:
    return parsing.Lexicons(
        adjectives=frozenset(lexicon.colors) | frozenset(lexicon.sizes),
        nouns=frozenset(lexicon.nouns),
    )


def _attribute_words(entity: Entity) -> set[str]:
    """Surface words an entity answers to; list-valued attributes (color
    synonym groups) contribute every member."""
    words: set[str] = set()
    for value in (entity.attributes or {}).values():
        if isinstance(value, str):
            words.add(value)
        elif isinstance(value, (list, tuple)):
            words.update(v for v in value if isinstance(v, str))
    return words


def _np_matches(entity: Entity, np_tokens) -> bool:
    return set(np_tokens) <= _attribute_words(entity)


def _entity_matches(entity: Entity, desc: dict) -> bool:
    attrs = entity.attributes or {}
    return all(attrs.get(key) == value for key, value in desc.items())


def resolve_by_attributes(tokens, scene: Scene, lexicons: parsing.Lexicons,
                          next_to_threshold: float = 0.25) -> str | None:
    """Brute-force resolution from ground-truth attributes.

    An entity satisfies a noun phrase when every NP token is one of its
    attribute words; relational expressions additionally need a distinct
    partner matching the second NP under the (geometrically evaluated)
    relation.  Returns the object_id when exactly one entity qualifies,
    else None.
    """
    parsed = parsing.parse(list(tokens), lexicons)
    segments = parsed.segments
    first_np = segments[0]
    rel_index = next(
        (i for i, seg in enumerate(segments) if isinstance(seg, parsing.RelPhrase)), None
    )
    if rel_index is None:
        matches = [e for e in scene.entities if _np_matches(e, first_np.tokens)]
        return matches[0].object_id if len(matches) == 1 else None
    phrase = segments[rel_index].phrase
    np2 = segments[rel_index + 1]
    candidates = []
    for ent in scene.entities:
        if not _np_matches(ent, first_np.tokens):
            continue
        for other in scene.entities:
            if other is ent or not _np_matches(other, np2.tokens):
                continue
            if relation_holds(phrase, ent, other, next_to_threshold):
                candidates.append(ent)
                break
    return candidates[0].object_id if len(candidates) == 1 else None


def _desc_tokens(desc: dict, rng: np.random.Generator) -> list[str]:
    tokens = ["the"]
    if "size" in desc:
        tokens.append(desc["size"])
    if "color" in desc:
        # Any synonym of the hue group names the color.
        group = desc["color"]
        tokens.append(group[int(rng.integers(len(group)))])
    tokens.append(desc["category"])
    return tokens


def _candidate_descs(entity: Entity) -> list[dict]:
    attrs = entity.attributes
    noun, color, size = attrs["category"], attrs["color"], attrs["size"]
    return [
        {"category": noun},
        {"category": noun, "color": color},
        {"category": noun, "size": size},
        {"category": noun, "color": color, "size": size},
    ]


def _unique_descs(entity: Entity, scene: Scene) -> list[dict]:
    out = []
    for desc in _candidate_descs(entity):
        matches = [e for e in scene.entities if _entity_matches(e, desc)]
        if len(matches) == 1 and matches[0] is entity:
            out.append(desc)
    return out


def render_expression(target: Entity, scene: Scene, config: GenConfig,
                      rng: np.random.Generator | None = None) -> tuple[str, ...]:
    """Tokens of an expression uniquely identifying the target.

    Prefers a simple attribute NP ("the [size]? [color]? noun"); when no
    attribute combination separates the target from every distractor, a
    relational phrase against a uniquely describable landmark is tried.
    Raises NoDiscriminatingExpressionError when nothing works, signalling
    the caller to resample the scene.
    """
    rng = rng if rng is not None else _rng(config.seed, "render")
    simple = _unique_descs(target, scene)
    if simple:
        desc = simple[rng.integers(len(simple))]
        return tuple(_desc_tokens(desc, rng))
    np1_descs = [
        d for d in _candidate_descs(target) if _entity_matches(target, d)
    ]
    landmarks = [
        e for e in scene.entities if e is not target and _unique_descs(e, scene)
    ]
    combos = []
    for landmark in landmarks:
        d2 = _unique_descs(landmark, scene)[0]
        for phrase in config.lexicon.relations:
            if not relation_holds(phrase, target, landmark, config.next_to_threshold):
                continue
            for d1 in np1_descs:
                combos.append((d1, phrase, d2))
    order = rng.permutation(len(combos))
    lexicons = parser_lexicons(config.lexicon)
    for idx in order:
        d1, phrase, d2 = combos[idx]
        tokens = _desc_tokens(d1, rng) + phrase.split() + _desc_tokens(d2, rng)
        if (
            resolve_by_attributes(tokens, scene, lexicons, config.next_to_threshold)
            == target.object_id
        ):
            return tuple(tokens)
    raise NoDiscriminatingExpressionError(
        f"no expression separates {target.object_id!r} in scene {scene.scene_id!r}"
    )


def _build_scene(config: GenConfig, prototypes, scene_id: str,
                 rng: np.random.Generator):
    """One sampling attempt; returns (Scene, target_id, tokens) or raises
    NoDiscriminatingExpressionError."""
    lex = config.lexicon
    nouns = list(lex.nouns)
    hue_groups = lex.hue_groups()
    sizes = list(lex.sizes)
    n = config.objects_per_scene
    relational = rng.random() < config.relation_fraction

    attrs = [
        {
            "category": nouns[rng.integers(len(nouns))],
            "color": list(hue_groups[rng.integers(len(hue_groups))]),
            "size": sizes[rng.integers(len(sizes))],
        }
        for _ in range(n)
    ]
    if relational:
        target_i, twin_i = (int(v) for v in rng.choice(n, size=2, replace=False))
        attrs[twin_i] = {**attrs[target_i], "color": list(attrs[target_i]["color"])}

    grid = math.ceil(math.sqrt(n))
    cell = 1.0 / grid
    cells = rng.choice(grid * grid, size=n, replace=False)
    entities = []
    for j in range(n):
        row, col = int(cells[j]) // grid, int(cells[j]) % grid
        size_scalar = lex.sizes[attrs[j]["size"]]
        half = cell * (0.16 + 0.18 * size_scalar)
        aspect = 1.0 + rng.uniform(-0.1, 0.1)
        hx = half * aspect
        hy = half / aspect
        cx = (col + 0.5) * cell + rng.uniform(-1, 1) * (cell / 2 - hx - 0.005)
        cy = (row + 0.5) * cell + rng.uniform(-1, 1) * (cell / 2 - hy - 0.005)
        bbox = (cx - hx, cy - hy, cx + hx, cy + hy)
        raw = np.concatenate(
            [
                prototypes[attrs[j]["category"]],
                np.array(lex.color_rgb(attrs[j]["color"][0])),
                np.array([size_scalar]),
            ]
        )
        raw = raw + rng.normal(size=raw.size) * config.noise_sigma
        entities.append(
            with_positional_features(
                f"o{j}",
                raw,
                bbox,
                {**attrs[j], "grid": [row, col]},
            )
        )
    scene = Scene(scene_id=scene_id, entities=tuple(entities))
    if not relational:
        # Restrict simple scenes to attribute-describable targets, so a
        # relation_fraction of 0 really yields attribute-only expressions.
        candidates = [
            j for j in range(n) if _unique_descs(scene.entities[j], scene)
        ]
        if not candidates:
            raise NoDiscriminatingExpressionError(
                f"no describable target in scene {scene_id!r}"
            )
        target_i = candidates[rng.integers(len(candidates))]
    tokens = render_expression(scene.entities[target_i], scene, config, rng)
    return scene, scene.entities[target_i].object_id, tokens


def generate_scene(config: GenConfig, prototypes, index: int):
    scene_id = f"s{config.scene_offset + index:06d}"
    rng = _rng(config.seed, "scene", config.scene_offset + index)
    for _ in range(config.max_retries):
        try:
            return _build_scene(config, prototypes, scene_id, rng)
        except NoDiscriminatingExpressionError:
            continue
    raise GenerationError(
        f"could not generate an unambiguous expression for scene {scene_id} "
        f"after {config.max_retries} attempts; enlarge the lexicon or reduce "
        f"objects_per_scene"
    )


def generate_dataset(config: GenConfig, split: str = "train") -> Dataset:
    """Generate scenes and one verified referring expression per scene.

    A pure function of the config: each scene draws from its own
    (seed, scene index) stream, so output is independent of evaluation
    order and stable across runs.
    """
    prototypes = category_prototypes(config)
    scenes: dict[str, Scene] = {}
    refexps: list[RefExpInstance] = []
    for i in range(config.n_scenes):
        scene, target_id, tokens = generate_scene(config, prototypes, i)
        scenes[scene.scene_id] = scene
        refexps.append(
            RefExpInstance(
                scene_id=scene.scene_id, tokens=tokens, target_object_id=target_id
            )
        )
    feature_dim = config.raw_feature_dim + 7
    return Dataset(scenes=scenes, refexps=refexps, split=split, feature_dim=feature_dim)


@dataclass(frozen=True, eq=False)
class ProbeSweep:
    """Feature vectors sweeping one ground-truth attribute with every
    other coordinate held at a neutral value."""

    attribute: str
    values: np.ndarray
    vectors: np.ndarray


NEUTRAL_BBOX = (0.4, 0.4, 0.6, 0.6)


def hue_probe_sweep(
    n_samples: int,
    prototype_dim: int = 32,
    hue_range: tuple[float, float] = (0.0, 11.0 / 12),
    size_value: float = 0.5,
) -> ProbeSweep:
    """Sweep the RGB block across hues (red toward violet); prototype
    coordinates sit at zero, size and geometry at neutral values."""
    from .data import compute_positional_features

    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    hues = np.linspace(hue_range[0], hue_range[1], n_samples)
    positional = compute_positional_features(NEUTRAL_BBOX)
    rows = []
    for h in hues:
        rgb = colorsys.hsv_to_rgb(float(h), 1.0, 1.0)
        rows.append(
            np.concatenate(
                [np.zeros(prototype_dim), np.array(rgb), np.array([size_value]), positional]
            )
        )
    return ProbeSweep(attribute="hue", values=hues, vectors=np.stack(rows))
