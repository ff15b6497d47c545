"""End-to-end tests of the command-line pipeline.

Commands run in-process through main() so exit codes and stdout TSV are
asserted directly; one subprocess test checks the installed entry point.
"""

import json
import os
import subprocess
import sys

import pytest

from semrec import SemanticDataset, brute_force_topk, load_dataset, load_schema
from semrec.cli import (EXIT_MISSING, EXIT_NO_CONVERGENCE, EXIT_OK,
                        EXIT_VALIDATION, main)

TOY_SCHEMA = """\
ENTITY user
ENTITY item
REL view user item positive asymmetric
"""

# u1 and u2 share i1; only u2 has seen i2; i3 and i4 are isolated items.
# At rank 2 the latent model transfers u2's taste to u1, so i2 is the one
# collaborative pick for u1 while the isolated items stay near zero.
TOY_DATA = """\
@entity\titem\ti3
@entity\titem\ti4
view\tu1\ti1\t1.0
view\tu2\ti1\t1.0
view\tu2\ti2\t1.0
"""


def write_toy(tmp_path, **overrides):
    (tmp_path / "toy.schema").write_text(TOY_SCHEMA)
    (tmp_path / "toy.tsv").write_text(TOY_DATA)
    cfg = {
        "schema": "toy.schema",
        "data": "toy.tsv",
        "model": "toy.model",
        "index": "toy.index",
        "weights": "toy.weights",
        "recommendations": "recs.tsv",
        "report_dir": "report",
        "k": 2,
        "index_types": ["item"],
        "recommend_k": 3,
        "target": "view",
        "seed": 7,
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def write_iptv_cfg(tmp_path, **overrides):
    cfg = {
        "schema": "tv.schema",
        "data": "tv.tsv",
        "model": "tv.model",
        "index": "tv.index",
        "weights": "tv.weights",
        "report_dir": "report",
        "k": 8,
        "target": "view",
        "grid": [0, 1],
        "passes": 1,
        "seed": 3,
        "iptv": {
            "users": 60, "programs": 40, "genres": 4, "series": 6, "tags": 8,
            "preference_ratio": 8.0,
            "densities": {"view": 0.06, "tag_assign": 5e-4, "shared_event": 1e-4},
        },
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr().out


def rows(text):
    lines = [ln for ln in text.splitlines() if ln]
    return [ln.split("\t") for ln in lines]


class TestConfigValidation:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_toy(tmp_path, typo_key=1)
        assert run(["build", "--config", cfg], capsys)[0] == EXIT_VALIDATION

    def test_missing_seed_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"schema": "x", "data": "y"}))
        assert run(["build", "--config", str(cfg_path)], capsys)[0] == EXIT_VALIDATION

    def test_broken_json_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text("{not json")
        assert run(["build", "--config", str(cfg_path)], capsys)[0] == EXIT_VALIDATION

    def test_absent_config_file_rejected(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.json")
        assert run(["build", "--config", missing], capsys)[0] == EXIT_VALIDATION

    def test_unknown_subcommand_rejected(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        assert run(["frobnicate", "--config", cfg], capsys)[0] == EXIT_VALIDATION

    def test_bad_metric_rejected(self, tmp_path, capsys):
        cfg = write_toy(tmp_path, metric="accuracy")
        assert run(["evaluate", "--config", cfg], capsys)[0] == EXIT_VALIDATION


class TestIngest:
    def test_prints_stats(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        code, out = run(["ingest", "--config", cfg], capsys)
        assert code == EXIT_OK
        table = rows(out)
        assert table[0] == ["section", "name", "count"]
        assert ["entities", "user", "2"] in table
        assert ["entities", "item", "4"] in table
        assert ["edges", "view", "3"] in table

    def test_canonical_copy_and_manifest(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        out_path = tmp_path / "canon.tsv"
        code, _ = run(["ingest", "--config", cfg, "--out", str(out_path)], capsys)
        assert code == EXIT_OK
        assert out_path.exists()
        assert (tmp_path / "canon.tsv.manifest.json").exists()
        schema = load_schema(tmp_path / "toy.schema")
        assert load_dataset(schema, out_path) == load_dataset(schema, tmp_path / "toy.tsv")

    def test_missing_data_exits_2(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        os.remove(tmp_path / "toy.tsv")
        assert run(["ingest", "--config", cfg], capsys)[0] == EXIT_MISSING


class TestBuild:
    def test_writes_model_and_prints_spectrum(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        code, out = run(["build", "--config", cfg], capsys)
        assert code == EXIT_OK
        assert (tmp_path / "toy.model").exists()
        assert (tmp_path / "toy.model.manifest.json").exists()
        table = rows(out)
        assert table[0] == ["rank", "eigenvalue", "kernel_value"]
        assert len(table) == 3  # header + k rows
        top = float(table[1][1])
        assert abs(abs(top) - (1 + 5 ** 0.5) / 2) < 1e-8  # path-graph extreme

    def test_manifest_records_inputs(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        run(["build", "--config", cfg], capsys)
        manifest = json.loads((tmp_path / "toy.model.manifest.json").read_text())
        assert set(manifest["inputs"]) == {"schema", "data"}
        assert manifest["seed"] == 7
        assert manifest["parameters"]["k"] == 2

    def test_non_convergence_exits_3(self, tmp_path, capsys):
        cfg = write_toy(tmp_path, max_iter=0)
        assert run(["build", "--config", cfg], capsys)[0] == EXIT_NO_CONVERGENCE

    def test_oversized_k_is_validation_failure(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        code, _ = run(["build", "--config", cfg, "--k", "999"], capsys)
        assert code == EXIT_VALIDATION


class TestPredict:
    def test_full_rank_reproduces_stored_rating(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        assert run(["build", "--config", cfg, "--k", "6"], capsys)[0] == EXIT_OK
        code, out = run(["predict", "user:u1", "item:i1", "--config", cfg,
                         "--rel", "view"], capsys)
        assert code == EXIT_OK
        header, row = rows(out)
        assert header == ["entity_a", "entity_b", "score", "view_scale"]
        assert abs(float(row[2]) - 1.0) < 1e-6
        assert abs(float(row[3]) - 1.0) < 1e-6

    def test_unknown_entity_is_validation_failure(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        run(["build", "--config", cfg], capsys)
        code, _ = run(["predict", "user:u1", "item:zzz", "--config", cfg], capsys)
        assert code == EXIT_VALIDATION

    def test_missing_model_exits_2(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        code, _ = run(["predict", "user:u1", "item:i1", "--config", cfg], capsys)
        assert code == EXIT_MISSING


def build_and_index(cfg, capsys):
    assert main(["build", "--config", cfg]) == EXIT_OK
    assert main(["index", "--config", cfg]) == EXIT_OK
    capsys.readouterr()


def toy_model(tmp_path):
    """The same model the CLI builds, loaded for oracle scoring."""
    from semrec import load_model
    return load_model(tmp_path / "toy.model")


class TestRecommend:
    def test_collaborative_item_ranks_first(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        code, out = run(["recommend", "--config", cfg, "--entity", "user:u1"],
                        capsys)
        assert code == EXIT_OK
        table = rows(out)
        assert table[0] == ["rank", "entity_type", "entity_id", "score"]
        body = table[1:]
        assert body[0][1:3] == ["item", "i2"]
        assert float(body[0][3]) > 0.4
        listed = {r[2] for r in body}
        assert "i1" not in listed  # already viewed
        assert listed == {"i2", "i3", "i4"}

    def test_matches_brute_force_oracle(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        _, out = run(["recommend", "--config", cfg, "--entity", "user:u1"],
                     capsys)
        got = [(r[1], r[2], float(r[3])) for r in rows(out)[1:]]
        oracle = brute_force_topk(toy_model(tmp_path), ("user", "u1"), k=3,
                                  exclusions={("item", "i1")}, etypes=("item",))
        assert got == oracle.entries

    def test_exclusion_flag_restores_seen_items(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        _, out = run(["recommend", "--config", cfg, "--entity", "user:u1",
                      "--exclude-seen=false", "--k", "4"], capsys)
        body = rows(out)[1:]
        assert body[0][1:3] == ["item", "i1"]  # the seen item scores highest
        oracle = brute_force_topk(toy_model(tmp_path), ("user", "u1"), k=4,
                                  etypes=("item",))
        assert [(r[1], r[2], float(r[3])) for r in body] == oracle.entries

    def test_k_beyond_pool_returns_all_and_exits_0(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        code, out = run(["recommend", "--config", cfg, "--entity", "user:u1",
                         "--k", "50"], capsys)
        assert code == EXIT_OK
        assert len(rows(out)) == 1 + 3  # header + every unseen item

    def test_output_file_matches_stdout(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        out_file = tmp_path / "out.tsv"
        _, out = run(["recommend", "--config", cfg, "--entity", "user:u1",
                      "--out", str(out_file)], capsys)
        assert out_file.read_text() == out
        assert (tmp_path / "out.tsv.manifest.json").exists()

    def test_missing_index_exits_2(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        assert main(["build", "--config", cfg]) == EXIT_OK
        capsys.readouterr()
        code, _ = run(["recommend", "--config", cfg, "--entity", "user:u1"],
                      capsys)
        assert code == EXIT_MISSING

    def test_malformed_entity_is_validation_failure(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        build_and_index(cfg, capsys)
        code, _ = run(["recommend", "--config", cfg, "--entity", "u1"], capsys)
        assert code == EXIT_VALIDATION


class TestStaleness:
    def test_edited_data_refuses_then_forces(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        assert main(["build", "--config", cfg]) == EXIT_OK
        with open(tmp_path / "toy.tsv", "a", encoding="utf-8") as fh:
            fh.write("view\tu1\ti4\t1.0\n")
        capsys.readouterr()
        # the model's manifest pins the data fingerprint it was built from
        assert run(["index", "--config", cfg], capsys)[0] == EXIT_VALIDATION
        assert run(["index", "--config", cfg, "--force"], capsys)[0] == EXIT_OK

    def test_hand_edited_model_refused(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        assert main(["build", "--config", cfg]) == EXIT_OK
        with open(tmp_path / "toy.model", "a", encoding="utf-8") as fh:
            fh.write("# tampered\n")
        capsys.readouterr()
        assert run(["index", "--config", cfg], capsys)[0] == EXIT_VALIDATION


class TestDeterminism:
    def test_identical_runs_produce_identical_artifacts(self, tmp_path, capsys):
        artifacts = {}
        for run_dir in ("a", "b"):
            base = tmp_path / run_dir
            base.mkdir()
            cfg = write_toy(base)
            assert main(["build", "--config", cfg]) == EXIT_OK
            assert main(["index", "--config", cfg]) == EXIT_OK
            assert main(["recommend", "--config", cfg,
                         "--entity", "user:u1"]) == EXIT_OK
            capsys.readouterr()
            artifacts[run_dir] = tuple(
                (base / name).read_bytes()
                for name in ("toy.model", "toy.index", "recs.tsv"))
        assert artifacts["a"] == artifacts["b"]


class TestEvaluate:
    def test_tiny_dataset_is_validation_failure(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)  # 3 edges; the holdout needs 10
        assert run(["evaluate", "--config", cfg], capsys)[0] == EXIT_VALIDATION

    def test_reports_score_on_synthetic_data(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path)
        assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
        capsys.readouterr()
        code, out = run(["evaluate", "--config", cfg, "--metric", "auc"], capsys)
        assert code == EXIT_OK
        table = dict((r[0], r[1]) for r in rows(out)[1:])
        assert table["target"] == "view"
        assert table["metric"] == "auc"
        assert 0.0 <= float(table["score"]) <= 1.0
        assert int(table["test_edges"]) > 0


class TestGenerateIptv:
    def test_writes_dataset_and_manifests(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path)
        code, out = run(["generate-iptv", "--config", cfg], capsys)
        assert code == EXIT_OK
        for name in ("tv.schema", "tv.tsv", "tv.schema.manifest.json",
                     "tv.tsv.manifest.json"):
            assert (tmp_path / name).exists()
        table = rows(out)
        assert ["entities", "user", "60"] in table
        assert ["edges", "isgenre", "40"] in table

    def test_deterministic_bytes(self, tmp_path, capsys):
        blobs = []
        for run_dir in ("a", "b"):
            base = tmp_path / run_dir
            base.mkdir()
            cfg = write_iptv_cfg(base)
            assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
            capsys.readouterr()
            blobs.append((base / "tv.schema").read_bytes()
                         + (base / "tv.tsv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_bad_params_exit_1(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path, iptv={"users": 0})
        assert run(["generate-iptv", "--config", cfg], capsys)[0] == EXIT_VALIDATION

    def test_unknown_param_exit_1(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path, iptv={"couch_count": 2})
        assert run(["generate-iptv", "--config", cfg], capsys)[0] == EXIT_VALIDATION


class TestLearnWeights:
    def test_learned_weights_feed_the_next_build(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path)
        assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
        capsys.readouterr()
        code, out = run(["learn-weights", "--config", cfg], capsys)
        assert code == EXIT_OK
        assert (tmp_path / "tv.weights").exists()
        trace_path = tmp_path / "tv.weights.trace.tsv"
        assert trace_path.exists()
        header = trace_path.read_text().splitlines()[0]
        assert header.startswith("pass\trelation\tweight\tmetric")
        table = rows(out)
        assert table[0][:2] == ["relation", "weight"]
        assert len(table) > 1
        # the weights file names reduced relations; build must accept it
        assert run(["build", "--config", cfg], capsys)[0] == EXIT_OK

    def test_needs_target(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path, target=None)
        assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
        capsys.readouterr()
        assert run(["learn-weights", "--config", cfg], capsys)[0] == EXIT_VALIDATION


class TestReport:
    def test_renders_figures_and_tables(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path)
        assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
        build_and_index(cfg, capsys)
        code, out = run(["report", "--config", cfg], capsys)
        assert code == EXIT_OK
        report_dir = tmp_path / "report"
        listed = [r[1] for r in rows(out)[1:]]
        for path in listed:
            assert os.path.exists(path)
        names = {os.path.basename(p) for p in listed}
        assert {"dataset_stats.tsv", "dataset_stats.png", "spectrum.tsv",
                "spectrum.png", "recall.tsv", "recall.png",
                "report_files.tsv"} <= names
        for png in report_dir.glob("*.png"):
            assert png.stat().st_size > 1000  # a real rendered image
        spectrum = (report_dir / "spectrum.tsv").read_text().splitlines()
        assert len(spectrum) == 1 + 8  # header + k
        recall = rows((report_dir / "recall.tsv").read_text())
        assert recall[0] == ["budget", "budget_fraction", "recall_at_k"]
        full = [r for r in recall[1:] if float(r[1]) == 1.0]
        assert full and float(full[0][2]) == 1.0  # exact at full budget

    def test_includes_trace_figure_after_learning(self, tmp_path, capsys):
        cfg = write_iptv_cfg(tmp_path)
        assert main(["generate-iptv", "--config", cfg]) == EXIT_OK
        assert main(["learn-weights", "--config", cfg]) == EXIT_OK
        assert main(["build", "--config", cfg]) == EXIT_OK
        capsys.readouterr()
        code, out = run(["report", "--config", cfg], capsys)
        assert code == EXIT_OK
        assert (tmp_path / "report" / "learning_trace.png").exists()

    def test_nothing_to_report_is_validation_failure(self, tmp_path, capsys):
        cfg = write_toy(tmp_path)
        os.remove(tmp_path / "toy.tsv")
        assert run(["report", "--config", cfg], capsys)[0] == EXIT_VALIDATION


class TestConsoleScript:
    def test_entry_point_reports_version(self):
        proc = subprocess.run([sys.executable, "-m", "semrec.cli", "--version"],
                              capture_output=True, text=True, timeout=60)
        assert proc.returncode == 0
        assert "semrec" in proc.stdout
