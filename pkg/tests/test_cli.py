import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import synth
from xlsent._io import sha256_file
from xlsent.cli import main
from xlsent.embed_store import EmbeddingTable, load_text_format, save_text_format
from xlsent.pipeline import STAGES, Pipeline, PipelineConfig


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    config = synth.build_workspace(root)
    assert main(["run-all", "--config", str(config)]) == 0
    return config


def manifests(out):
    return {s: json.loads((out / s / "manifest.json").read_text()) for s in STAGES}


class TestRunAll:
    def test_outputs_and_figures(self, workspace):
        out = workspace.parent / "out"
        for rel in ["evaluate/table.txt", "evaluate/metrics.tsv", "evaluate/confusion.png", "evaluate/accuracy.png",
                    "eval-align/metrics.tsv", "eval-align/p_at_k.png", "align/refine.png", "finetune/loss.png",
                    "train-encoder/loss.png", "train-classifier/loss.png", "stats/stats.tsv", "align/kpv-eng.matrix.txt"]:
            assert (out / rel).exists(), rel
        assert (out / "evaluate/confusion.png").read_bytes()[:4] == b"\x89PNG"

    def test_manifests_chain_by_hash(self, workspace):
        out = workspace.parent / "out"
        mans = manifests(out)
        produced = {}
        for stage in STAGES:
            for rel, digest in mans[stage]["outputs"].items():
                produced[str(out / rel)] = digest
        chained = 0
        for stage in STAGES:
            for path, digest in mans[stage]["inputs"].items():
                if path in produced:
                    assert produced[path] == digest, (stage, path)
                    chained += 1
        assert chained > 20
        assert all(m["seed"] == 7 for m in mans.values())

    def test_every_artifact_has_one_owner(self, workspace):
        out = workspace.parent / "out"
        owners = {}
        for stage, man in manifests(out).items():
            for rel in man["outputs"]:
                owners.setdefault(rel, []).append(stage)
        files = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
        assert files == set(owners)
        assert all(len(v) == 1 for v in owners.values())

    def test_synthetic_accuracy(self, workspace):
        report = json.loads((workspace.parent / "out/evaluate/report.json").read_text())
        assert set(report) == {"fin", "kpv", "mdf", "eng"}
        assert all(r["accuracy"] >= 0.9 for r in report.values())

    def test_second_run_skips_everything(self, workspace):
        cfg = PipelineConfig.load(workspace)
        assert not any(Pipeline(cfg).run_all().values())

    def test_pca_reduces_dim(self, workspace):
        out = workspace.parent / "out"
        assert load_text_format(out / "convert/eng.vec").dim == 24
        assert load_text_format(out / "pca/eng.vec").dim == 16


class TestResume:
    def test_corrupted_intermediate_is_restored(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        pipe = Pipeline(PipelineConfig.load(config))
        pipe.run_all()
        target = tmp_path / "out/clone/kpv.vec"
        good = target.read_bytes()
        target.write_text("garbage\n")
        ran = Pipeline(PipelineConfig.load(config)).run_all()
        assert target.read_bytes() == good
        assert [s for s, did in ran.items() if did] == ["clone"]

    def test_changed_input_reruns_downstream(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        Pipeline(PipelineConfig.load(config)).run_all()
        corpus = tmp_path / "kpv.corpus.txt"
        corpus.write_text(corpus.read_text() + "kpv1 kpv2 kpv3\n")
        ran = Pipeline(PipelineConfig.load(config)).run_all()
        assert not ran["convert"] and not ran["clone"] and not ran["train-encoder"]
        assert ran["finetune"] and ran["align"]

    def test_seed_override_reruns(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        Pipeline(PipelineConfig.load(config)).run_all()
        ran = Pipeline(PipelineConfig.load(config, seed=8)).run_all()
        assert all(ran.values())

    def test_deterministic_outputs(self, tmp_path):
        hashes = []
        for name in ("a", "b"):
            config = synth.build_workspace(tmp_path / name)
            Pipeline(PipelineConfig.load(config)).run_all()
            out = tmp_path / name / "out"
            hashes.append({p.relative_to(out).as_posix(): sha256_file(p)
                           for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"})
        assert hashes[0] == hashes[1]


class TestExitCodes:
    def test_empty_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        assert main(["run-all", "--config", str(p)]) == 3

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        assert main(["run-all", "--config", str(p)]) == 3

    def test_missing_config_file(self, tmp_path):
        assert main(["run-all", "--config", str(tmp_path / "none.json")]) == 2

    def test_missing_stage_input(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        (tmp_path / "fin.vec").unlink()
        assert main(["convert", "--config", str(config)]) == 2

    def test_malformed_embeddings(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        (tmp_path / "eng.vec").write_text("2 3\na 1 2\n")
        assert main(["convert", "--config", str(config)]) == 3

    def test_too_few_alignment_pairs(self, tmp_path):
        config = synth.build_workspace(tmp_path)
        synth.write_lines(tmp_path / "fin-eng.tsv", [f"f{i}\te{i}" for i in range(5)])
        assert main(["run-all", "--config", str(config)]) == 4


class TestStandaloneEvaluate:
    def test_perfect_predictions(self, tmp_path, capsys):
        labels = ["neg", "pos", "pos", "neg"]
        (tmp_path / "p.txt").write_text("\n".join(labels) + "\n")
        (tmp_path / "g.jsonl").write_text("".join(json.dumps({"label": l}) + "\n" for l in labels))
        code = main(["evaluate", "--pred", str(tmp_path / "p.txt"), "--gold", str(tmp_path / "g.jsonl"),
                     "--out-dir", str(tmp_path / "rep")])
        assert code == 0
        assert capsys.readouterr().out.strip() == "neg 1.00 1.00 1.00, pos 1.00 1.00 1.00, accuracy 1.00"
        assert json.loads((tmp_path / "rep/report.json").read_text())["test"]["accuracy"] == 1.0
        assert (tmp_path / "rep/confusion.png").exists()

    def test_length_mismatch(self, tmp_path):
        (tmp_path / "p.txt").write_text("neg\n")
        (tmp_path / "g.txt").write_text("neg\npos\n")
        assert main(["evaluate", "--pred", str(tmp_path / "p.txt"), "--gold", str(tmp_path / "g.txt"),
                     "--out-dir", str(tmp_path)]) == 3


def test_pca_stage_300_to_100(tmp_path):
    rng = np.random.default_rng(0)
    config = synth.build_workspace(tmp_path)
    save_text_format(EmbeddingTable([f"e{i}" for i in range(400)], rng.normal(size=(400, 300))), tmp_path / "eng.vec")
    raw = json.loads(config.read_text())
    raw["params"]["pca_dim"] = 100
    config.write_text(json.dumps(raw))
    assert main(["convert", "--config", str(config)]) == 0
    assert main(["pca", "--config", str(config)]) == 0
    table = load_text_format(tmp_path / "out/pca/eng.vec")
    assert table.dim == 100
    np.testing.assert_allclose(np.linalg.norm(table.vectors, axis=1), 1.0, atol=1e-5)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "xlsent", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "run-all" in res.stdout
