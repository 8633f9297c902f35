"""Command-line entry point: gen, train, eval, resolve, embed, sim, cluster, probe.

Each subcommand resolves its parameters in three layers: built-in
defaults, then a key=value config file (--config), then explicit CLI
flags.  Unknown config keys are rejected.  The resolved configuration is
logged to stderr and hashed into every report header, so a report is a
pure function of (inputs, config, seed).  Diagnostics go to stderr; data
goes to files and stdout.  Exit code 0 means success.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, composition, dbscan as dbscan_mod, parsing, scenegen, tsne as tsne_mod
from .classifiers import AdamConfig, TrainConfig
from .data import Dataset, load_dataset, save_dataset
from .model import SamplingConfig, WacModel, load_model, save_model, train_model

logger = logging.getLogger("wac")


class ConfigError(Exception):
    pass


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def resolve_config(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults <- config file <- CLI flags; unknown file keys rejected."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in parse_config_file(config_path).items():
            if key not in defaults:
                raise ConfigError(
                    f"unknown config key {key!r} (known: {', '.join(sorted(defaults))})"
                )
            resolved[key] = _convert(key, raw, defaults[key])
    for key in defaults:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            resolved[key] = flag
    for key, value in sorted(resolved.items()):
        logger.info("config %s = %r", key, value)
    return resolved


def config_hash(resolved: dict) -> str:
    payload = json.dumps(resolved, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def report_header(command: str, resolved: dict) -> str:
    return f"# wac {command} v{__version__} config-hash={config_hash(resolved)}\n"


# --- gen -------------------------------------------------------------------

GEN_DEFAULTS = {
    "n_scenes": 1000,
    "objects_per_scene": 8,
    "noise_sigma": 0.05,
    "seed": 0,
    "relation_fraction": 0.25,
    "prototype_dim": 32,
    "next_to_threshold": 0.25,
    "out_dir": "data",
}


def _gen_config(resolved: dict, n_scenes: int, offset: int) -> scenegen.GenConfig:
    return scenegen.GenConfig(
        n_scenes=n_scenes,
        objects_per_scene=resolved["objects_per_scene"],
        noise_sigma=resolved["noise_sigma"],
        seed=resolved["seed"],
        relation_fraction=resolved["relation_fraction"],
        prototype_dim=resolved["prototype_dim"],
        next_to_threshold=resolved["next_to_threshold"],
        scene_offset=offset,
    )


def cmd_gen(args) -> int:
    resolved = resolve_config(GEN_DEFAULTS, args)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    n = resolved["n_scenes"]
    n_train = int(n * 0.8)
    n_dev = int(n * 0.1)
    counts = {"train": n_train, "dev": n_dev, "test": n - n_train - n_dev}
    offset = 0
    for split, count in counts.items():
        config = _gen_config(resolved, count, offset)
        offset += count
        dataset = scenegen.generate_dataset(config, split=split)
        save_dataset(
            dataset,
            out_dir / f"{split}_scenes.jsonl",
            out_dir / f"{split}_refexps.jsonl",
        )
        vocab = {tok for refexp in dataset.refexps for tok in refexp.tokens}
        relational = sum(
            1
            for refexp in dataset.refexps
            if parsing.parse(list(refexp.tokens), scenegen.parser_lexicons(config.lexicon)).relations
        )
        frac = relational / len(dataset.refexps) if dataset.refexps else 0.0
        print(
            f"{split}: {count} scenes, {len(dataset.refexps)} expressions, "
            f"vocabulary {len(vocab)}, relational fraction {frac:.3f}"
        )
    lexicons = scenegen.parser_lexicons(scenegen.GenLexicon())
    parsing.save_lexicons(lexicons, out_dir / "lexicons.txt")
    print(f"wrote dataset to {out_dir}")
    return 0


# --- train -----------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data_dir": "data",
    "split": "train",
    "backend": "mlp",
    "strategy": "",
    "seed": 0,
    "neg_ratio": 5,
    "min_positives": 5,
    "max_epochs": 2000,
    "learning_rate": 1e-3,
    "l2_alpha": 0.1,
    "l1_lambda": 1e-4,
    "tree_max_depth": 2,
    "min_leaf": 1,
    "convergence_tol": 1e-6,
    "out": "model.json",
}


def _load_split(data_dir: str, split: str) -> Dataset:
    base = Path(data_dir)
    return load_dataset(
        base / f"{split}_scenes.jsonl", base / f"{split}_refexps.jsonl", split=split
    )


def _lexicons_for(data_dir: str) -> parsing.Lexicons:
    path = Path(data_dir) / "lexicons.txt"
    if path.exists():
        return parsing.load_lexicons(path)
    logger.warning("no lexicons.txt in %s; using built-in defaults", data_dir)
    return parsing.Lexicons()


def _train_config(resolved: dict) -> TrainConfig:
    return TrainConfig(
        max_epochs=resolved["max_epochs"],
        adam=AdamConfig(learning_rate=resolved["learning_rate"]),
        l2_alpha=resolved["l2_alpha"],
        l1_lambda=resolved["l1_lambda"],
        tree_max_depth=resolved["tree_max_depth"],
        min_leaf=resolved["min_leaf"],
        seed=resolved["seed"],
        convergence_tol=resolved["convergence_tol"],
    )


def cmd_train(args) -> int:
    resolved = resolve_config(TRAIN_DEFAULTS, args)
    strategy_name = resolved["strategy"]
    if strategy_name:
        # Validates strategy/backend pairing before any training starts.
        composition.make_strategy(strategy_name, resolved["backend"])
        if strategy_name != "relational":
            composition.validate_strategy(
                composition.Strategy(strategy_name), resolved["backend"]
            )
    dataset = _load_split(resolved["data_dir"], resolved["split"])
    lexicons = _lexicons_for(resolved["data_dir"])
    sampling = SamplingConfig(
        neg_ratio=resolved["neg_ratio"],
        min_positives=resolved["min_positives"],
        seed=resolved["seed"],
    )
    model = train_model(
        dataset, resolved["backend"], sampling, _train_config(resolved), lexicons
    )
    if strategy_name == "relational":
        composition.train_relational(model, dataset)
    save_model(model, resolved["out"])
    excluded = model.train_meta.get("excluded", [])
    print(
        f"trained {len(model.classifiers)} word classifiers "
        f"({model.backend} backend), {len(model.relational)} relational classifiers"
    )
    print(
        f"excluded {len(excluded)} words below {sampling.min_positives} positives: "
        + (", ".join(excluded) if excluded else "(none)")
    )
    print(f"wrote model to {resolved['out']}")
    return 0


# --- eval ------------------------------------------------------------------

EVAL_DEFAULTS = {
    "model": "model.json",
    "data_dir": "data",
    "split": "test",
    "strategies": "",
    "out": "",
    "next_to_threshold": 0.25,
}


def _default_strategies(model: WacModel) -> list[str]:
    names = [n for n, b in composition._STRATEGY_BACKENDS.items() if b == model.backend]
    if model.relational:
        names.append("relational")
    return names


def evaluate_strategy(
    model: WacModel,
    dataset: Dataset,
    strategy: composition.Strategy,
    train_dataset: Dataset | None = None,
):
    """Accuracy overall and on the simple / relational expression subsets."""
    cache = composition.WarmStartCache()
    totals = {"overall": [0, 0], "simple": [0, 0], "relational": [0, 0]}
    for refexp in dataset.refexps:
        scene = dataset.scenes[refexp.scene_id]
        parsed = parsing.parse(list(refexp.tokens), model.lexicons)
        subset = "relational" if parsed.relations else "simple"
        predicted, _ = composition.resolve(
            model, refexp.tokens, scene, strategy, dataset=train_dataset, cache=cache
        )
        hit = int(predicted == refexp.target_object_id)
        for key in ("overall", subset):
            totals[key][0] += hit
            totals[key][1] += 1
    return {
        key: (hits / n if n else float("nan"), n) for key, (hits, n) in totals.items()
    }


def _oracle_rows(model: WacModel, dataset: Dataset, next_to_threshold: float):
    totals = {"overall": [0, 0], "simple": [0, 0], "relational": [0, 0]}
    chance = {"overall": [0.0, 0], "simple": [0.0, 0], "relational": [0.0, 0]}
    for refexp in dataset.refexps:
        scene = dataset.scenes[refexp.scene_id]
        parsed = parsing.parse(list(refexp.tokens), model.lexicons)
        subset = "relational" if parsed.relations else "simple"
        resolved = scenegen.resolve_by_attributes(
            refexp.tokens, scene, model.lexicons, next_to_threshold
        )
        hit = int(resolved == refexp.target_object_id)
        for key in ("overall", subset):
            totals[key][0] += hit
            totals[key][1] += 1
            chance[key][0] += 1.0 / len(scene.entities)
            chance[key][1] += 1
    oracle = {
        key: (hits / n if n else float("nan"), n) for key, (hits, n) in totals.items()
    }
    rand = {
        key: (acc / n if n else float("nan"), n) for key, (acc, n) in chance.items()
    }
    return oracle, rand


def _format_row(name: str, stats: dict) -> str:
    def fmt(key):
        acc, n = stats[key]
        return "na" if n == 0 else f"{acc:.4f}"

    return (
        f"{name}\t{fmt('overall')}\t{fmt('simple')}\t{fmt('relational')}"
        f"\t{stats['overall'][1]}\t{stats['simple'][1]}\t{stats['relational'][1]}"
    )


def cmd_eval(args) -> int:
    resolved = resolve_config(EVAL_DEFAULTS, args)
    model = load_model(resolved["model"])
    dataset = _load_split(resolved["data_dir"], resolved["split"])
    names = (
        [s.strip() for s in resolved["strategies"].split(",") if s.strip()]
        if resolved["strategies"]
        else _default_strategies(model)
    )
    strategies = [composition.make_strategy(name, model.backend) for name in names]
    for strategy in strategies:
        composition.validate_strategy(strategy, model.backend)
    train_dataset = None
    if any("warmstart" in name for name in names):
        train_dataset = _load_split(resolved["data_dir"], "train")
    lines = ["strategy\toverall\tsimple\trelational\tn_overall\tn_simple\tn_relational"]
    for name, strategy in zip(names, strategies):
        stats = evaluate_strategy(model, dataset, strategy, train_dataset)
        lines.append(_format_row(name, stats))
        logger.info("evaluated %s: overall %.4f", name, stats["overall"][0])
    oracle, rand = _oracle_rows(model, dataset, resolved["next_to_threshold"])
    lines.append(_format_row("attribute-oracle", oracle))
    lines.append(_format_row("random-chance", rand))
    report = report_header("eval", resolved) + "\n".join(lines) + "\n"
    if resolved["out"]:
        Path(resolved["out"]).write_text(report, encoding="utf-8")
        logger.info("wrote report to %s", resolved["out"])
    print(report, end="")
    return 0


# --- resolve ---------------------------------------------------------------

RESOLVE_DEFAULTS = {
    "model": "model.json",
    "strategy": "",
    "input": "",
    "data_dir": "",
}


def cmd_resolve(args) -> int:
    resolved = resolve_config(RESOLVE_DEFAULTS, args)
    model = load_model(resolved["model"])
    name = resolved["strategy"] or f"{model.backend}-summed"
    strategy = composition.make_strategy(name, model.backend)
    composition.validate_strategy(strategy, model.backend)
    raw = (
        Path(resolved["input"]).read_text(encoding="utf-8")
        if resolved["input"]
        else sys.stdin.read()
    )
    payload = json.loads(raw)
    scene_obj = payload["scene"]
    # Reuse the dataset entity normalization (positional feature appending).
    from .data import _parse_scene_line, tokenize

    scene = _parse_scene_line(json.dumps(scene_obj), 1, "<resolve-input>")
    tokens = payload.get("tokens") or list(tokenize(payload["expression"]))
    train_dataset = (
        _load_split(resolved["data_dir"], "train") if resolved["data_dir"] else None
    )
    predicted, scores = composition.resolve(
        model, tokens, scene, strategy, dataset=train_dataset
    )
    print(
        json.dumps(
            {"predicted": predicted, "scores": scores.scores}, sort_keys=True
        )
    )
    return 0


# --- embed / sim / cluster / probe ------------------------------------------

EMBED_DEFAULTS = {"model": "model.json", "out": "embeddings.txt"}


def cmd_embed(args) -> int:
    resolved = resolve_config(EMBED_DEFAULTS, args)
    model = load_model(resolved["model"])
    table = analysis.embedding_table(model)
    analysis.save_embeddings(table, resolved["out"])
    print(f"wrote {len(table.vectors)} embeddings of dim {table.dim} to {resolved['out']}")
    return 0


SIM_DEFAULTS = {
    "embeddings": "embeddings.txt",
    "external": "",
    "pairs": "pairs.tsv",
    "out": "",
}


def cmd_sim(args) -> int:
    resolved = resolve_config(SIM_DEFAULTS, args)
    tables = {"wac": analysis.load_external_embeddings(resolved["embeddings"], source="wac-hidden")}
    if resolved["external"]:
        tables["external"] = analysis.load_external_embeddings(resolved["external"])
    pairs = analysis.load_similarity_pairs(resolved["pairs"])
    report = analysis.eval_similarity(tables, pairs)
    lines = ["table\trho\tcoverage"]
    for name, stats in report.tables.items():
        lines.append(f"{name}\t{stats.rho:.6f}\t{stats.coverage}")
    if report.combined is not None:
        lines.append(f"combined\t{report.combined.rho:.6f}\t{report.combined.coverage}")
    text = report_header("sim", resolved) + "\n".join(lines) + "\n"
    if resolved["out"]:
        Path(resolved["out"]).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


CLUSTER_DEFAULTS = {
    "embeddings": "embeddings.txt",
    "eps": 0.7,
    "min_pts": 5,
    "perplexity": 0.0,  # 0 = auto: min(30, (n - 1) / 3)
    "iterations": 1000,
    "learning_rate": 0.0,  # 0 = auto: max(2, n / 8)
    "seed": 0,
    "out": "clusters.tsv",
}


def cluster_embeddings(
    table: analysis.EmbeddingTable,
    eps: float = 0.7,
    min_pts: int = 5,
    perplexity: float = 0.0,
    iterations: int = 1000,
    learning_rate: float = 0.0,
    seed: int = 0,
):
    """t-SNE to 2-D, then DBSCAN; returns (words, coords, labels).

    Perplexity and learning rate of 0 auto-scale to the vocabulary size;
    the map of a desk-scale vocabulary collapses to nothing at the rates
    appropriate for thousands of points.
    """
    words = sorted(table.vectors)
    matrix = np.stack([table.vectors[w] for w in words])
    if perplexity <= 0:
        perplexity = min(30.0, max(2.0, (len(words) - 1) / 3.0))
        logger.info("auto perplexity %.1f for %d words", perplexity, len(words))
    if learning_rate <= 0:
        learning_rate = max(2.0, len(words) / 8.0)
        logger.info("auto learning rate %.1f for %d words", learning_rate, len(words))
    config = tsne_mod.TsneConfig(
        perplexity=perplexity,
        iterations=iterations,
        learning_rate=learning_rate,
        seed=seed,
    )
    result = tsne_mod.tsne(matrix, config)
    labels = dbscan_mod.dbscan(
        result.coords, dbscan_mod.ClusterConfig(eps=eps, min_pts=min_pts)
    )
    return words, result.coords, labels


def cmd_cluster(args) -> int:
    resolved = resolve_config(CLUSTER_DEFAULTS, args)
    table = analysis.load_external_embeddings(resolved["embeddings"], source="wac-hidden")
    words, coords, labels = cluster_embeddings(
        table,
        eps=resolved["eps"],
        min_pts=resolved["min_pts"],
        perplexity=resolved["perplexity"],
        iterations=resolved["iterations"],
        learning_rate=resolved["learning_rate"],
        seed=resolved["seed"],
    )
    lines = ["word\tcluster\tx\ty"]
    for i, word in enumerate(words):
        lines.append(f"{word}\t{labels[i]}\t{coords[i, 0]:.6f}\t{coords[i, 1]:.6f}")
    text = report_header("cluster", resolved) + "\n".join(lines) + "\n"
    Path(resolved["out"]).write_text(text, encoding="utf-8")
    by_cluster: dict[int, list[str]] = {}
    for i, word in enumerate(words):
        by_cluster.setdefault(int(labels[i]), []).append(word)
    for cluster_id in sorted(by_cluster):
        tag = "noise" if cluster_id == dbscan_mod.NOISE else f"cluster {cluster_id}"
        print(f"{tag}: {' '.join(by_cluster[cluster_id])}")
    print(f"wrote cluster listing to {resolved['out']}")
    return 0


PROBE_DEFAULTS = {
    "model": "model.json",
    "word": "",
    "samples": 100,
    "out": "probe.tsv",
}


def cmd_probe(args) -> int:
    resolved = resolve_config(PROBE_DEFAULTS, args)
    if not resolved["word"]:
        raise ConfigError("probe needs a word (--word)")
    model = load_model(resolved["model"])
    prototype_dim = model.feature_dim - 4 - 7  # rgb + size + positional block
    if prototype_dim < 0:
        raise ConfigError(
            "model feature dim too small for the synthetic probe layout"
        )
    sweep = scenegen.hue_probe_sweep(resolved["samples"], prototype_dim)
    curve = analysis.probe_classifier(model, resolved["word"], sweep)
    lines = ["hue\tprobability"]
    for value, prob in curve:
        lines.append(f"{value:.6f}\t{prob:.6f}")
    text = report_header("probe", resolved) + "\n".join(lines) + "\n"
    Path(resolved["out"]).write_text(text, encoding="utf-8")
    print(f"wrote {len(curve)} probe samples to {resolved['out']}")
    return 0


# --- argument parsing --------------------------------------------------------


def _add_common(sub, defaults):
    sub.add_argument("--config", help="key = value config file")
    for key, default in defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            sub.add_argument(flag, type=lambda v: v.lower() in ("true", "1", "yes"), default=None)
        elif isinstance(default, int):
            sub.add_argument(flag, type=int, default=None)
        elif isinstance(default, float):
            sub.add_argument(flag, type=float, default=None)
        else:
            sub.add_argument(flag, type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wac",
        description="Word-classifier reference resolution: data generation, "
        "training, evaluation, and coefficient-embedding analyses.",
    )
    parser.add_argument("--version", action="version", version=f"wac {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, defaults, func, summary in (
        ("gen", GEN_DEFAULTS, cmd_gen, "generate a synthetic dataset (80/10/10 split)"),
        ("train", TRAIN_DEFAULTS, cmd_train, "train word (and relational) classifiers"),
        ("eval", EVAL_DEFAULTS, cmd_eval, "accuracy report over composition strategies"),
        ("resolve", RESOLVE_DEFAULTS, cmd_resolve, "resolve one expression against one scene"),
        ("embed", EMBED_DEFAULTS, cmd_embed, "export classifier-coefficient embeddings"),
        ("sim", SIM_DEFAULTS, cmd_sim, "similarity benchmark correlation report"),
        ("cluster", CLUSTER_DEFAULTS, cmd_cluster, "t-SNE + DBSCAN cluster listing"),
        ("probe", PROBE_DEFAULTS, cmd_probe, "classifier response curve over a hue sweep"),
    ):
        sub = subs.add_parser(name, help=summary)
        _add_common(sub, defaults)
        sub.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface every module error as a clean message
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
