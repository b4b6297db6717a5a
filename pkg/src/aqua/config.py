"""Run configuration documents.

A run is described by one JSON file with a `loop` section and either a
`generator` section (synthesize the corpus and dataset) or a `corpus`
section (load them from files).  Parsing is strict: unknown keys anywhere
in the document are rejected so a typo cannot silently fall back to a
default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .loop import LoopConfig, TrainConfig
from .oracle import GeneratorConfig, NoiseModel, SyntheticBundle, generate_synthetic, load_bundle
from .policy import BudgetSchedule, FiltrationThresholds

OUTPUT_DIR_ENV = "AQUA_OUTPUT_DIR"


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _check_keys(doc: dict, allowed, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")


def _number(doc, key, default, where, integer=False):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number")
    if integer:
        if float(value) != int(value):
            raise ConfigError(f"{where}.{key}: expected an integer")
        return int(value)
    return float(value)


def _parse_schedule(doc, where: str) -> BudgetSchedule:
    _check_keys(doc, {"kind", "initial_batch", "per_round", "stop_below",
                      "high_batch", "upper_threshold", "lower_threshold",
                      "fraction"}, where)
    kind = doc.get("kind")
    if kind == "fixed":
        if "initial_batch" not in doc or "per_round" not in doc:
            raise ConfigError(f"{where}: fixed schedule needs initial_batch and per_round")
        return BudgetSchedule.fixed(
            initial_batch=_number(doc, "initial_batch", None, where, integer=True),
            per_round=_number(doc, "per_round", None, where, integer=True),
        )
    if kind == "scanqa":
        base = BudgetSchedule.scanqa()
    elif kind == "vista":
        base = BudgetSchedule.vista()
    else:
        raise ConfigError(f"{where}.kind: expected fixed, scanqa, or vista")
    return BudgetSchedule(
        kind=kind,
        initial_batch=_number(doc, "initial_batch", base.initial_batch, where, integer=True),
        per_round=_number(doc, "per_round", base.per_round, where, integer=True),
        stop_below=_number(doc, "stop_below", base.stop_below, where, integer=True),
        high_batch=_number(doc, "high_batch", base.high_batch, where, integer=True),
        upper_threshold=_number(doc, "upper_threshold", base.upper_threshold, where,
                                integer=True),
        lower_threshold=_number(doc, "lower_threshold", base.lower_threshold, where,
                                integer=True),
        fraction=_number(doc, "fraction", base.fraction, where),
    )


def _parse_train(doc, where: str) -> TrainConfig:
    _check_keys(doc, {"learning_rate", "batch_size", "steps_per_epoch", "seed",
                      "ensemble_heads"}, where)
    return TrainConfig(
        learning_rate=_number(doc, "learning_rate", 0.1, where),
        batch_size=_number(doc, "batch_size", 32, where, integer=True),
        steps_per_epoch=_number(doc, "steps_per_epoch", None, where, integer=True),
        seed=_number(doc, "seed", 0, where, integer=True),
        ensemble_heads=_number(doc, "ensemble_heads", 0, where, integer=True),
    )


def _parse_thresholds(doc, where: str) -> FiltrationThresholds:
    _check_keys(doc, {"z_cov", "z_loss"}, where)
    return FiltrationThresholds(
        z_cov=_number(doc, "z_cov", -1.0, where),
        z_loss=_number(doc, "z_loss", 3.0, where),
    )


def _parse_loop(doc, where: str, seed_override=None) -> LoopConfig:
    _check_keys(doc, {"num_epochs", "strategy", "selection_epochs",
                      "reannotation_epochs", "schedule", "thresholds", "oracle",
                      "train", "eval_split_fraction", "auc_baseline",
                      "score_thresholds", "epsilon", "remote_timeout",
                      "master_seed"}, where)
    for key in ("num_epochs", "strategy", "schedule", "oracle"):
        if key not in doc:
            raise ConfigError(f"{where}: missing required field {key!r}")
    selection = doc.get("selection_epochs", "every")
    if selection != "every":
        if not isinstance(selection, list):
            raise ConfigError(f"{where}.selection_epochs: expected \"every\" or a list")
        selection = tuple(int(e) for e in selection)
    reannotation = doc.get("reannotation_epochs", [])
    if not isinstance(reannotation, list):
        raise ConfigError(f"{where}.reannotation_epochs: expected a list")
    thresholds_doc = doc.get("score_thresholds", [])
    if not isinstance(thresholds_doc, list):
        raise ConfigError(f"{where}.score_thresholds: expected a list")
    master_seed = _number(doc, "master_seed", 0, where, integer=True)
    if seed_override is not None:
        master_seed = seed_override
    return LoopConfig(
        num_epochs=_number(doc, "num_epochs", None, where, integer=True),
        strategy=doc["strategy"],
        schedule=_parse_schedule(doc["schedule"], f"{where}.schedule"),
        oracle_kind=doc["oracle"],
        train=_parse_train(doc.get("train", {}), f"{where}.train"),
        selection_epochs=selection,
        reannotation_epochs=tuple(int(e) for e in reannotation),
        thresholds=_parse_thresholds(doc.get("thresholds", {}), f"{where}.thresholds"),
        eval_split_fraction=_number(doc, "eval_split_fraction", 0.2, where),
        auc_baseline=_number(doc, "auc_baseline", 20.0, where),
        score_thresholds=tuple(float(t) for t in thresholds_doc),
        epsilon=_number(doc, "epsilon", 1e-8, where),
        remote_timeout=_number(doc, "remote_timeout", 600.0, where),
        master_seed=master_seed,
    )


def _parse_noise(doc, where: str, seed_override=None) -> NoiseModel:
    _check_keys(doc, {"rate_alt_valid", "rate_non_canonical", "rate_irrelevant",
                      "seed"}, where)
    seed = _number(doc, "seed", 0, where, integer=True)
    if seed_override is not None:
        seed = seed_override
    return NoiseModel(
        rate_alt_valid=_number(doc, "rate_alt_valid", 0.0, where),
        rate_non_canonical=_number(doc, "rate_non_canonical", 0.0, where),
        rate_irrelevant=_number(doc, "rate_irrelevant", 0.0, where),
        seed=seed,
    )


def _parse_generator(doc, where: str, seed_override=None) -> GeneratorConfig:
    _check_keys(doc, {"num_instances", "num_terms", "embedding_dim", "feature_dim",
                      "spread", "zipf_exponent", "qtype_mix", "noise", "seed"}, where)
    for key in ("num_instances", "num_terms", "embedding_dim", "feature_dim"):
        if key not in doc:
            raise ConfigError(f"{where}: missing required field {key!r}")
    mix = doc.get("qtype_mix")
    if mix is not None and not isinstance(mix, dict):
        raise ConfigError(f"{where}.qtype_mix: expected an object")
    seed = _number(doc, "seed", 0, where, integer=True)
    if seed_override is not None:
        seed = seed_override
    return GeneratorConfig(
        num_instances=_number(doc, "num_instances", None, where, integer=True),
        num_terms=_number(doc, "num_terms", None, where, integer=True),
        embedding_dim=_number(doc, "embedding_dim", None, where, integer=True),
        feature_dim=_number(doc, "feature_dim", None, where, integer=True),
        spread=_number(doc, "spread", 0.5, where),
        zipf_exponent=_number(doc, "zipf_exponent", 0.0, where),
        qtype_mix={k: int(v) for k, v in mix.items()} if mix is not None else None,
        noise=_parse_noise(doc.get("noise", {}), f"{where}.noise", seed_override),
        seed=seed,
    )


@dataclass(frozen=True)
class RunSpec:
    """A parsed run document plus everything needed to reproduce it."""

    label: str
    path: str
    loop: LoopConfig
    generator: GeneratorConfig | None
    corpus_paths: dict | None
    output_dir: str | None
    document: dict

    def comparable_view(self) -> dict:
        """The document with strategy/oracle choices and plumbing blanked.

        Two runs are comparable when these views are equal: only the
        acquisition strategy, the oracle, and its ensemble sizing may vary.
        """
        view = json.loads(json.dumps(self.document))
        view.pop("output_dir", None)
        loop = view.get("loop", {})
        loop.pop("strategy", None)
        loop.pop("oracle", None)
        loop.get("train", {}).pop("ensemble_heads", None)
        return view


def load_run_spec(path, seed_override=None) -> RunSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    _check_keys(document, {"loop", "generator", "corpus", "output_dir"}, str(path))
    if "loop" not in document:
        raise ConfigError(f"{path}: missing required section 'loop'")
    has_generator = "generator" in document
    has_corpus = "corpus" in document
    if has_generator == has_corpus:
        raise ConfigError(f"{path}: provide exactly one of 'generator' or 'corpus'")

    loop = _parse_loop(document["loop"], f"{path}:loop", seed_override)
    generator = None
    corpus_paths = None
    if has_generator:
        generator = _parse_generator(document["generator"], f"{path}:generator",
                                     seed_override)
    else:
        section = document["corpus"]
        _check_keys(section, {"corpus", "refinement", "dataset"}, f"{path}:corpus")
        for key in ("corpus", "refinement", "dataset"):
            if key not in section:
                raise ConfigError(f"{path}:corpus: missing required field {key!r}")
        base = path.parent
        corpus_paths = {
            key: str((base / section[key]).resolve()) for key in
            ("corpus", "refinement", "dataset")
        }

    output_dir = document.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError(f"{path}: output_dir must be a string")
    return RunSpec(
        label=path.stem,
        path=str(path),
        loop=loop,
        generator=generator,
        corpus_paths=corpus_paths,
        output_dir=output_dir,
        document=document,
    )


def build_bundle(spec: RunSpec) -> SyntheticBundle:
    if spec.generator is not None:
        return generate_synthetic(spec.generator)
    paths = spec.corpus_paths
    return load_bundle(paths["corpus"], paths["refinement"], paths["dataset"])


def resolve_output_dir(spec: RunSpec) -> Path:
    """Environment override first, then the document, then the working dir."""
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        target = Path(env)
    elif spec.output_dir:
        target = Path(spec.path).parent / spec.output_dir
    else:
        target = Path(".")
    target.mkdir(parents=True, exist_ok=True)
    return target
