"""Core data types and dataset ingestion.

A dataset is a pair of JSONL files: one scene per line (entities with
opaque feature vectors, optional bounding boxes and ground-truth
attributes) and one referring expression per line.  On load, entities
with a bounding box get 7 positional features appended to their raw
feature vector, so classifier inputs always include region geometry.
"""
from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field

import numpy as np

N_POSITIONAL = 7

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class DatasetError(Exception):
    """Base class for dataset ingestion failures."""


class DatasetFormatError(DatasetError):
    """Malformed file content; message names the offending line."""


class ReferentialIntegrityError(DatasetError):
    """A referring expression points at a scene or object that does not exist."""


class DimensionMismatchError(DatasetError):
    """Entities do not share a single feature dimensionality."""


@dataclass(frozen=True, eq=False)
class Entity:
    """One candidate object: an opaque feature vector plus optional geometry.

    ``features`` is the full classifier input; for entities with a bbox the
    last ``N_POSITIONAL`` entries are the positional features derived from it.
    ``attributes`` carries synthetic ground truth only and is never visible
    to classifiers.
    """

    object_id: str
    features: np.ndarray
    bbox: tuple[float, float, float, float] | None = None
    attributes: dict | None = None


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    entities: tuple[Entity, ...]

    def entity(self, object_id: str) -> Entity:
        for ent in self.entities:
            if ent.object_id == object_id:
                return ent
        raise KeyError(object_id)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([ent.features for ent in self.entities])


@dataclass(frozen=True)
class RefExpInstance:
    scene_id: str
    tokens: tuple[str, ...]
    target_object_id: str


@dataclass(eq=False)
class Dataset:
    scenes: dict[str, Scene]
    refexps: list[RefExpInstance] = field(default_factory=list)
    split: str = "train"
    feature_dim: int = 0


def tokenize(expression: str) -> tuple[str, ...]:
    """Lowercase, strip punctuation, split on whitespace."""
    return tuple(expression.lower().translate(_PUNCT_TABLE).split())


def validate_bbox(bbox) -> tuple[float, float, float, float]:
    if len(bbox) != 4:
        raise ValueError(f"bbox must have 4 coordinates, got {len(bbox)}")
    x1, y1, x2, y2 = (float(v) for v in bbox)
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise ValueError(
            f"invalid bbox {bbox!r}: need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1"
        )
    return (x1, y1, x2, y2)


def compute_positional_features(bbox) -> np.ndarray:
    """Return [x1, y1, x2, y2, area, dist_center, orientation] for a bbox.

    ``area`` is relative to the unit image, ``dist_center`` is the Euclidean
    distance from the box center to (0.5, 0.5), and ``orientation`` is the
    normalized width-height difference (w - h) / (w + h), in [-1, 1].
    Degenerate boxes (zero width or height) are rejected.
    """
    x1, y1, x2, y2 = validate_bbox(bbox)
    w = x2 - x1
    h = y2 - y1
    area = w * h
    cx = (x1 + x2) / 2.0
    cy = (y1 + y2) / 2.0
    dist_center = math.hypot(cx - 0.5, cy - 0.5)
    orientation = (w - h) / (w + h)
    return np.array([x1, y1, x2, y2, area, dist_center, orientation], dtype=float)


def with_positional_features(object_id: str, raw_features, bbox, attributes) -> Entity:
    """Build an Entity, appending positional features when a bbox is present."""
    raw = np.asarray(raw_features, dtype=float)
    if raw.ndim != 1:
        raise ValueError("entity features must be a flat vector")
    if not np.all(np.isfinite(raw)):
        raise ValueError(f"non-finite feature values for object {object_id!r}")
    if bbox is not None:
        bbox = validate_bbox(bbox)
        full = np.concatenate([raw, compute_positional_features(bbox)])
    else:
        full = raw
    attrs = dict(attributes) if attributes is not None else None
    return Entity(object_id=object_id, features=full, bbox=bbox, attributes=attrs)


def _parse_scene_line(line: str, lineno: int, path: str) -> Scene:
    try:
        obj = json.loads(line)
        scene_id = obj["scene_id"]
        raw_entities = obj["entities"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}:{lineno}: malformed scene line ({exc})") from exc
    entities = []
    seen = set()
    for ent in raw_entities:
        try:
            entity = with_positional_features(
                ent["object_id"], ent["features"], ent.get("bbox"), ent.get("attributes")
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: bad entity ({exc})") from exc
        if entity.object_id in seen:
            raise DatasetFormatError(
                f"{path}:{lineno}: duplicate object_id {entity.object_id!r} in scene {scene_id!r}"
            )
        seen.add(entity.object_id)
        entities.append(entity)
    if len(entities) < 2:
        raise DatasetFormatError(
            f"{path}:{lineno}: scene {scene_id!r} needs at least 2 entities"
        )
    return Scene(scene_id=scene_id, entities=tuple(entities))


def load_dataset(scenes_path, refexps_path, split: str = "train") -> Dataset:
    """Load a dataset from scene and refexp JSONL files.

    Raises DatasetFormatError (naming the line), ReferentialIntegrityError
    for dangling ids, or DimensionMismatchError when entities disagree on
    feature dimensionality.
    """
    scenes: dict[str, Scene] = {}
    feature_dim = None
    scenes_path = str(scenes_path)
    refexps_path = str(refexps_path)
    with open(scenes_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            scene = _parse_scene_line(line, lineno, scenes_path)
            if scene.scene_id in scenes:
                raise DatasetFormatError(
                    f"{scenes_path}:{lineno}: duplicate scene_id {scene.scene_id!r}"
                )
            for ent in scene.entities:
                if feature_dim is None:
                    feature_dim = ent.features.size
                elif ent.features.size != feature_dim:
                    raise DimensionMismatchError(
                        f"{scenes_path}:{lineno}: object {ent.object_id!r} has "
                        f"{ent.features.size} features, expected {feature_dim}"
                    )
            scenes[scene.scene_id] = scene

    refexps: list[RefExpInstance] = []
    with open(refexps_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                scene_id = obj["scene_id"]
                expression = obj["expression"]
                target = obj["target_object_id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetFormatError(
                    f"{refexps_path}:{lineno}: malformed refexp line ({exc})"
                ) from exc
            if scene_id not in scenes:
                raise ReferentialIntegrityError(
                    f"{refexps_path}:{lineno}: unknown scene_id {scene_id!r}"
                )
            scene = scenes[scene_id]
            if not any(ent.object_id == target for ent in scene.entities):
                raise ReferentialIntegrityError(
                    f"{refexps_path}:{lineno}: target {target!r} not in scene {scene_id!r}"
                )
            tokens = tokenize(expression)
            if not tokens:
                raise DatasetFormatError(f"{refexps_path}:{lineno}: empty expression")
            refexps.append(
                RefExpInstance(scene_id=scene_id, tokens=tokens, target_object_id=target)
            )
    return Dataset(
        scenes=scenes, refexps=refexps, split=split, feature_dim=feature_dim or 0
    )


def _entity_jsonable(ent: Entity) -> dict:
    # Entities with a bbox carry recomputable positional features in their
    # last N_POSITIONAL slots; strip them so load_dataset round-trips.
    feats = ent.features[:-N_POSITIONAL] if ent.bbox is not None else ent.features
    obj = {"object_id": ent.object_id, "features": [float(v) for v in feats]}
    if ent.bbox is not None:
        obj["bbox"] = [float(v) for v in ent.bbox]
    if ent.attributes is not None:
        obj["attributes"] = ent.attributes
    return obj


def scene_jsonable(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "entities": [_entity_jsonable(ent) for ent in scene.entities],
    }


def refexp_jsonable(refexp: RefExpInstance) -> dict:
    return {
        "scene_id": refexp.scene_id,
        "expression": " ".join(refexp.tokens),
        "target_object_id": refexp.target_object_id,
    }


def save_dataset(dataset: Dataset, scenes_path, refexps_path) -> None:
    """Write the dataset in the JSONL formats read by load_dataset."""
    try:
        with open(scenes_path, "w", encoding="utf-8") as fh:
            for scene in dataset.scenes.values():
                fh.write(json.dumps(scene_jsonable(scene)) + "\n")
        with open(refexps_path, "w", encoding="utf-8") as fh:
            for refexp in dataset.refexps:
                fh.write(json.dumps(refexp_jsonable(refexp)) + "\n")
    except OSError as exc:
        raise DatasetError(f"failed writing dataset ({exc})") from exc
