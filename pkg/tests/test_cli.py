"""Config document parsing and command line behavior."""

import csv
import json
from pathlib import Path

import pytest

from aqua.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from aqua.config import (
    ConfigError,
    build_bundle,
    load_run_spec,
    resolve_output_dir,
)
from aqua.oracle import load_bundle

CONFIGS_DIR = Path(__file__).resolve().parents[1] / "configs"


def tiny_document(strategy="random", oracle="lazy", **overrides):
    doc = {
        "loop": {
            "num_epochs": 3,
            "strategy": strategy,
            "oracle": oracle,
            "schedule": {"kind": "fixed", "initial_batch": 20, "per_round": 10},
            "reannotation_epochs": [1],
            "train": {"learning_rate": 0.5, "batch_size": 16, "seed": 1},
            "score_thresholds": [50, 150],
            "master_seed": 7,
        },
        "generator": {
            "num_instances": 80,
            "num_terms": 4,
            "embedding_dim": 4,
            "feature_dim": 5,
            "spread": 0.3,
            "noise": {"rate_non_canonical": 0.1, "seed": 5},
            "seed": 3,
        },
    }
    doc.update(overrides)
    return doc


def write_document(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


class TestLoadRunSpec:
    def test_parses_tiny_document(self, tmp_path):
        spec = load_run_spec(write_document(tmp_path, tiny_document()))
        assert spec.label == "run"
        assert spec.loop.num_epochs == 3
        assert spec.loop.strategy == "random"
        assert spec.loop.schedule.kind == "fixed"
        assert spec.loop.schedule.initial_batch == 20
        assert spec.loop.score_thresholds == (50.0, 150.0)
        assert spec.generator.noise.rate_non_canonical == pytest.approx(0.1)
        assert spec.corpus_paths is None

    @pytest.mark.parametrize("name", [
        "desk-sim.json", "desk-sim-random.json", "vista-sim.json",
        "scanqa-sim.json", "desk-remote.json",
    ])
    def test_shipped_presets_parse(self, name):
        spec = load_run_spec(CONFIGS_DIR / name)
        assert spec.loop.num_epochs >= 1
        assert spec.generator is not None

    def test_vista_preset_uses_piecewise_schedule(self):
        spec = load_run_spec(CONFIGS_DIR / "vista-sim.json")
        assert spec.loop.schedule.kind == "vista"
        assert spec.loop.schedule.initial_batch == 3000
        assert spec.loop.schedule.upper_threshold == 2250

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_spec(tmp_path / "absent.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_run_spec(path)

    @pytest.mark.parametrize("mutate,fragment", [
        (lambda d: d.update(extra=1), "unknown fields"),
        (lambda d: d["loop"].update(stratgy="random"), "unknown fields"),
        (lambda d: d["loop"]["schedule"].update(batch=5), "unknown fields"),
        (lambda d: d["loop"]["train"].update(lr=0.1), "unknown fields"),
        (lambda d: d["generator"].update(dim=2), "unknown fields"),
        (lambda d: d["generator"]["noise"].update(rate=0.1), "unknown fields"),
        (lambda d: d["loop"].pop("strategy"), "missing required"),
        (lambda d: d["generator"].pop("num_terms"), "missing required"),
        (lambda d: d.pop("loop"), "missing required section"),
        (lambda d: d["loop"].update(num_epochs=2.5), "expected an integer"),
        (lambda d: d["loop"].update(selection_epochs=4), "expected"),
        (lambda d: d["loop"]["schedule"].update(kind="adaptive"), "expected fixed"),
    ])
    def test_rejects_bad_documents(self, tmp_path, mutate, fragment):
        doc = tiny_document()
        mutate(doc)
        with pytest.raises(ConfigError, match=fragment):
            load_run_spec(write_document(tmp_path, doc))

    def test_requires_exactly_one_source(self, tmp_path):
        doc = tiny_document()
        doc["corpus"] = {"corpus": "a.tsv", "refinement": "b.json", "dataset": "c.jsonl"}
        with pytest.raises(ConfigError, match="exactly one"):
            load_run_spec(write_document(tmp_path, doc))
        doc = tiny_document()
        del doc["generator"]
        with pytest.raises(ConfigError, match="exactly one"):
            load_run_spec(write_document(tmp_path, doc))

    def test_corpus_paths_resolve_relative_to_document(self, tmp_path):
        doc = tiny_document()
        del doc["generator"]
        doc["corpus"] = {"corpus": "data/c.tsv", "refinement": "data/r.json",
                        "dataset": "data/d.jsonl"}
        spec = load_run_spec(write_document(tmp_path, doc))
        assert spec.corpus_paths["corpus"] == str(tmp_path / "data" / "c.tsv")

    def test_seed_override_touches_all_three_seeds(self, tmp_path):
        path = write_document(tmp_path, tiny_document())
        spec = load_run_spec(path, seed_override=42)
        assert spec.loop.master_seed == 42
        assert spec.generator.seed == 42
        assert spec.generator.noise.seed == 42
        base = load_run_spec(path)
        assert base.loop.master_seed == 7
        assert base.generator.seed == 3
        assert base.generator.noise.seed == 5

    def test_invalid_loop_values_surface_as_value_errors(self, tmp_path):
        doc = tiny_document()
        doc["loop"]["strategy"] = "psychic"
        with pytest.raises(ValueError):
            load_run_spec(write_document(tmp_path, doc))


class TestComparableView:
    def test_strategy_and_oracle_differences_are_ignored(self, tmp_path):
        a = load_run_spec(write_document(tmp_path, tiny_document(), "a.json"))
        b = load_run_spec(write_document(
            tmp_path, tiny_document(strategy="weighted_variance", oracle="hierarchical"),
            "b.json"))
        assert a.comparable_view() == b.comparable_view()

    def test_ensemble_heads_and_output_dir_are_ignored(self, tmp_path):
        doc = tiny_document(strategy="infogain_bald")
        doc["loop"]["train"]["ensemble_heads"] = 3
        doc["output_dir"] = "elsewhere"
        a = load_run_spec(write_document(tmp_path, doc, "a.json"))
        b = load_run_spec(write_document(tmp_path, tiny_document(), "b.json"))
        assert a.comparable_view() == b.comparable_view()

    def test_other_differences_are_visible(self, tmp_path):
        a = load_run_spec(write_document(tmp_path, tiny_document(), "a.json"))
        doc = tiny_document()
        doc["loop"]["eval_split_fraction"] = 0.3
        b = load_run_spec(write_document(tmp_path, doc, "b.json"))
        assert a.comparable_view() != b.comparable_view()


class TestOutputDir:
    def test_environment_wins(self, tmp_path, monkeypatch):
        doc = tiny_document()
        doc["output_dir"] = "from-doc"
        spec = load_run_spec(write_document(tmp_path, doc))
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "from-env"))
        assert resolve_output_dir(spec) == tmp_path / "from-env"
        assert (tmp_path / "from-env").is_dir()

    def test_document_dir_is_relative_to_the_document(self, tmp_path, monkeypatch):
        monkeypatch.delenv("AQUA_OUTPUT_DIR", raising=False)
        doc = tiny_document()
        doc["output_dir"] = "out"
        spec = load_run_spec(write_document(tmp_path, doc))
        assert resolve_output_dir(spec) == tmp_path / "out"


class TestRunCommand:
    def test_writes_artifacts(self, tmp_path, monkeypatch):
        path = write_document(tmp_path, tiny_document())
        out = tmp_path / "out"
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(out))
        assert main(["run", str(path)]) == EXIT_OK
        result = json.loads((out / "result.json").read_text(encoding="utf-8"))
        assert len(result["logs"]) == 3
        assert (out / "curves.csv").exists()
        assert (out / "filtration.csv").exists()

    def test_seed_flag_lands_in_the_result(self, tmp_path, monkeypatch):
        path = write_document(tmp_path, tiny_document())
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "out"))
        assert main(["run", str(path), "--seed", "41"]) == EXIT_OK
        result = json.loads((tmp_path / "out" / "result.json").read_text(encoding="utf-8"))
        assert result["config"]["master_seed"] == 41

    def test_bad_config_exits_two(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{oops", encoding="utf-8")
        assert main(["run", str(path)]) == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_unknown_strategy_exits_two(self, tmp_path):
        doc = tiny_document(strategy="psychic")
        assert main(["run", str(write_document(tmp_path, doc))]) == EXIT_CONFIG

    def test_remote_oracle_is_redirected_to_serve(self, tmp_path, capsys):
        doc = tiny_document(oracle="remote_human")
        assert main(["run", str(write_document(tmp_path, doc))]) == EXIT_CONFIG
        assert "serve" in capsys.readouterr().err

    def test_runtime_failure_exits_one(self, tmp_path, monkeypatch, capsys):
        doc = tiny_document()
        del doc["generator"]
        doc["corpus"] = {"corpus": "no.tsv", "refinement": "no.json",
                        "dataset": "no.jsonl"}
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "out"))
        assert main(["run", str(write_document(tmp_path, doc))]) == EXIT_RUNTIME
        assert "error:" in capsys.readouterr().err


class TestGenCommand:
    def test_writes_loadable_bundle(self, tmp_path, monkeypatch):
        path = write_document(tmp_path, tiny_document())
        out = tmp_path / "gen-out"
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(out))
        assert main(["gen", str(path)]) == EXIT_OK
        bundle = load_bundle(out / "corpus.tsv", out / "refinement.json",
                             out / "dataset.jsonl")
        assert len(bundle.dataset.records) == 80
        assert len(bundle.corpus) == 8

    def test_gen_round_trips_into_a_run(self, tmp_path, monkeypatch):
        gen_path = write_document(tmp_path, tiny_document())
        data_dir = tmp_path / "data"
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(data_dir))
        assert main(["gen", str(gen_path)]) == EXIT_OK

        doc = tiny_document()
        del doc["generator"]
        doc["corpus"] = {"corpus": "data/corpus.tsv",
                        "refinement": "data/refinement.json",
                        "dataset": "data/dataset.jsonl"}
        run_path = write_document(tmp_path, doc, "from-files.json")
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "run-out"))
        assert main(["run", str(run_path)]) == EXIT_OK

    def test_gen_needs_a_generator_section(self, tmp_path):
        doc = tiny_document()
        del doc["generator"]
        doc["corpus"] = {"corpus": "a.tsv", "refinement": "b.json", "dataset": "c.jsonl"}
        assert main(["gen", str(write_document(tmp_path, doc))]) == EXIT_CONFIG


class TestCompareCommand:
    def test_two_strategies_tabulate(self, tmp_path, monkeypatch):
        rand = write_document(tmp_path, tiny_document(), "rand.json")
        wv = write_document(tmp_path, tiny_document(strategy="weighted_variance"),
                            "wv.json")
        out = tmp_path / "cmp"
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(out))
        assert main(["compare", str(rand), str(wv)]) == EXIT_OK

        with open(out / "comparison.csv", encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        header, body = rows[0], rows[1:]
        assert header[:5] == ["label", "strategy", "oracle", "auc", "final_em"]
        assert "cost_50" in header and "reduction_50" in header
        assert "cost_150" in header and "reduction_150" in header
        assert [row[1] for row in body] == ["random", "weighted_variance"]

        by_strategy = {row[1]: dict(zip(header, row)) for row in body}
        # The random run is its own baseline, so its reduction is exactly zero.
        assert float(by_strategy["random"]["reduction_50"]) == 0.0
        # EM cannot reach 150, so that cost and reduction are undefined.
        assert by_strategy["random"]["cost_150"] == "N/A"
        assert by_strategy["random"]["reduction_150"] == "N/A"
        assert (out / "rand" / "result.json").exists()
        assert (out / "wv" / "result.json").exists()

    def test_single_config_exits_two(self, tmp_path, monkeypatch):
        path = write_document(tmp_path, tiny_document())
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "cmp"))
        assert main(["compare", str(path)]) == EXIT_CONFIG

    def test_mismatched_configs_exit_two(self, tmp_path, monkeypatch, capsys):
        a = write_document(tmp_path, tiny_document(), "a.json")
        doc = tiny_document(strategy="entropy")
        doc["loop"]["master_seed"] = 99
        b = write_document(tmp_path, doc, "b.json")
        monkeypatch.setenv("AQUA_OUTPUT_DIR", str(tmp_path / "cmp"))
        assert main(["compare", str(a), str(b)]) == EXIT_CONFIG
        assert "differ beyond strategy/oracle" in capsys.readouterr().err

    def test_shipped_desk_pair_is_comparable(self):
        a = load_run_spec(CONFIGS_DIR / "desk-sim.json")
        b = load_run_spec(CONFIGS_DIR / "desk-sim-random.json")
        assert a.comparable_view() == b.comparable_view()


class TestBuildBundle:
    def test_generator_spec_builds(self, tmp_path):
        spec = load_run_spec(write_document(tmp_path, tiny_document()))
        bundle = build_bundle(spec)
        assert len(bundle.dataset.records) == 80
        assert bundle.embeddings.vectors.shape[0] == len(bundle.corpus)
