import json

import numpy as np
import pytest

from topicmix.cli import main
from topicmix.corpus import load_jsonl, write_jsonl
from topicmix.fixtures import write_synthetic_corpus
from topicmix.mixing import load_weights
from topicmix.oracle import SyntheticOracle, save_oracle
from topicmix.sampling import read_manifest


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    write_synthetic_corpus(path, n_docs=300, seed=3)
    return path


@pytest.fixture(scope="module")
def embedded(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("emb") / "corpus.emb"
    assert main(["embed", "--input", str(small_corpus), "--out", str(out),
                 "--dim", "32", "--local", "--seed", "1"]) == 0
    return out


def test_embed_writes_matrix_and_manifest(embedded):
    assert embedded.exists()
    assert (embedded.parent / (embedded.name + ".ids")).exists()
    manifest = json.loads((embedded.parent / (embedded.name + ".manifest.json")).read_text())
    assert manifest["command"] == "embed"
    assert manifest["outputs"]
    assert all(len(h) == 64 for h in manifest["outputs"].values())


def test_usage_error_exit_code():
    assert main(["embed", "--nope"]) == 1
    assert main(["mix"]) == 1


def test_data_error_exit_code(tmp_path):
    missing = tmp_path / "missing.jsonl"
    assert main(["embed", "--input", str(missing), "--out", str(tmp_path / "o.emb")]) == 2


def test_stats_and_mix_temperature(small_corpus, tmp_path):
    stats_out = tmp_path / "stats.json"
    assert main(["stats", "--input", str(small_corpus), "--grouping", "source",
                 "--out", str(stats_out)]) == 0
    weights_out = tmp_path / "w.json"
    assert main(["mix", "temperature", "--stats", str(stats_out), "--t", "0.4",
                 "--out", str(weights_out)]) == 0
    w = load_weights(weights_out)
    assert abs(float(w.w.sum()) - 1.0) <= 1e-9
    # t=0 gives uniform over the sources present
    assert main(["mix", "temperature", "--stats", str(stats_out), "--t", "0",
                 "--out", str(weights_out)]) == 0
    w0 = load_weights(weights_out)
    assert np.allclose(w0.w, 1.0 / w0.m, atol=1e-12)


def test_mix_perfre_cli(tmp_path):
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"grouping": "topic", "names": ["a", "b", "c"],
                                "weights": [0.522, 0.267, 0.211]}))
    scores = tmp_path / "scores.json"
    scores.write_text(json.dumps({"baseline": 1.0,
                                  "scores": {"a": 3.0, "b": 2.0, "c": 1.0}}))
    out = tmp_path / "out.json"
    assert main(["mix", "perfre", "--base", str(base), "--scores", str(scores),
                 "--k", "1", "--factor", "1.3", "--out", str(out)]) == 0
    w = load_weights(out)
    assert w.w == pytest.approx([0.6786, 0.1795, 0.1419], abs=1e-4)


def test_trials_regmix_doremi_landscape_cli(tmp_path):
    oracle_path = tmp_path / "oracle.json"
    save_oracle(SyntheticOracle(v=(1.0, 2.0, 0.7), s=3.0), oracle_path)

    trials_path = tmp_path / "trials.jsonl"
    assert main(["trials", "--oracle", str(oracle_path), "--n", "64",
                 "--out", str(trials_path), "--seed", "5"]) == 0
    assert len(trials_path.read_text().splitlines()) == 64

    regmix_out = tmp_path / "regmix.json"
    assert main(["mix", "regmix", "--trials", str(trials_path), "--kind",
                 "quadratic-ridge", "--n-sim", "2000", "--top-k", "20",
                 "--out", str(regmix_out), "--seed", "5"]) == 0
    w = load_weights(regmix_out)
    assert abs(float(w.w.sum()) - 1.0) <= 1e-9

    doremi_out = tmp_path / "doremi.json"
    assert main(["mix", "doremi", "--oracle", str(oracle_path), "--steps", "10",
                 "--out", str(doremi_out)]) == 0
    assert abs(float(load_weights(doremi_out).w.sum()) - 1.0) <= 1e-9

    scape_out = tmp_path / "scape.json"
    assert main(["landscape", "--trials", str(trials_path), "--kind",
                 "quadratic-ridge", "--n", "500", "--out", str(scape_out),
                 "--slice", "g0", "g1", "--steps", "4"]) == 0
    summary = json.loads(scape_out.read_text())
    assert summary["lowest_half_mean"] <= summary["mean"]
    grid_lines = (tmp_path / "scape.json.grid.csv").read_text().splitlines()
    assert grid_lines[0] == "wi,wj,loss"


def test_mix_cartesian_cli(tmp_path):
    tw = tmp_path / "tw.json"
    sw = tmp_path / "sw.json"
    tw.write_text(json.dumps({"grouping": "topic", "names": ["t1", "t2"],
                              "weights": [0.6, 0.4]}))
    sw.write_text(json.dumps({"grouping": "source", "names": ["s1", "s2"],
                              "weights": [0.5, 0.5]}))
    out = tmp_path / "cells.json"
    assert main(["mix", "cartesian", "--topic-weights", str(tw),
                 "--source-weights", str(sw), "--out", str(out)]) == 0
    w = load_weights(out)
    assert w.names == ("t1|s1", "t1|s2", "t2|s1", "t2|s2")
    assert w.w == pytest.approx([0.3, 0.3, 0.2, 0.2])


def test_sample_cli_deterministic(small_corpus, tmp_path):
    stats_out = tmp_path / "stats.json"
    main(["stats", "--input", str(small_corpus), "--out", str(stats_out)])
    weights_out = tmp_path / "w.json"
    main(["mix", "temperature", "--stats", str(stats_out), "--t", "0.5",
          "--out", str(weights_out)])
    m1, m2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
    for out in (m1, m2):
        assert main(["sample", "--input", str(small_corpus), "--weights",
                     str(weights_out), "--total-tokens", "20000",
                     "--seed", "9", "--out", str(out)]) == 0
    assert m1.read_bytes() == m2.read_bytes()
    manifest = read_manifest(m1)
    assert manifest.realized_tokens >= 20000 * 0.99


def test_select_cli_with_field_scores(small_corpus, tmp_path):
    stats_out = tmp_path / "stats.json"
    main(["stats", "--input", str(small_corpus), "--out", str(stats_out)])
    weights_out = tmp_path / "w.json"
    main(["mix", "temperature", "--stats", str(stats_out), "--t", "1.0",
          "--out", str(weights_out)])
    out = tmp_path / "sel.jsonl"
    assert main(["select", "--input", str(small_corpus), "--weights",
                 str(weights_out), "--total-tokens", "5000", "--scorer", "field",
                 "--out", str(out)]) == 0
    manifest = read_manifest(out)
    assert manifest.policy == "select"
    assert manifest.entries


def test_config_file_defaults_and_flag_override(small_corpus, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("# defaults\ndim = 16\nseed = 4\n")
    out = tmp_path / "cfg.emb"
    assert main(["embed", "--input", str(small_corpus), "--out", str(out),
                 "--local", "--config", str(config)]) == 0
    from topicmix.embedding import read_embeddings
    assert read_embeddings(out).dim == 16

    out2 = tmp_path / "cfg2.emb"
    assert main(["embed", "--input", str(small_corpus), "--out", str(out2),
                 "--local", "--config", str(config), "--dim", "8"]) == 0
    assert read_embeddings(out2).dim == 8


def test_identical_runs_byte_identical_outputs(small_corpus, tmp_path):
    outs = []
    for name in ("a.emb", "b.emb"):
        out = tmp_path / name
        assert main(["embed", "--input", str(small_corpus), "--out", str(out),
                     "--dim", "16", "--local", "--seed", "2"]) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    # manifests differ only by path names and timestamp
    m0 = json.loads((tmp_path / "a.emb.manifest.json").read_text())
    m1 = json.loads((tmp_path / "b.emb.manifest.json").read_text())
    assert list(m0["outputs"].values()) == list(m1["outputs"].values())


def test_cluster_then_pipeline_stages(small_corpus, embedded, tmp_path):
    prefix = tmp_path / "cm"
    assert main(["cluster", "--emb", str(embedded), "--out", str(prefix),
                 "--k1", "12", "--k2", "4", "--seed", "3"]) == 0

    summaries = tmp_path / "summaries.json"
    assert main(["summarize", "--input", str(small_corpus), "--cluster",
                 str(prefix), "--out", str(summaries), "--stub"]) == 0
    loaded = json.loads(summaries.read_text())
    assert len(loaded["summaries"]) == 12
    assert all(s.startswith("SUMMARY[") for s in loaded["summaries"])

    tax_out = tmp_path / "taxonomy.json"
    assert main(["merge", "--summaries", str(summaries), "--cluster", str(prefix),
                 "--m", "3", "--out", str(tax_out), "--stub"]) == 0
    tax = json.loads(tax_out.read_text())
    assert len(tax["final_topics"]) == 3

    labels = tmp_path / "labels.jsonl"
    assert main(["annotate", "--input", str(small_corpus), "--emb", str(embedded),
                 "--taxonomy", str(tax_out), "--out", str(labels), "--n", "200",
                 "--provider", "cluster", "--cluster", str(prefix),
                 "--seed", "11"]) == 0

    model_prefix = tmp_path / "clf"
    assert main(["train-classifier", "--labels", str(labels), "--emb",
                 str(embedded), "--out", str(model_prefix), "--epochs", "60"]) == 0

    annotated = tmp_path / "annotated.jsonl"
    assert main(["classify", "--input", str(small_corpus), "--emb", str(embedded),
                 "--model", str(model_prefix), "--out", str(annotated)]) == 0
    corpus = load_jsonl(annotated)
    assert all(t is not None for t in corpus.topics)

    npmi_out = tmp_path / "npmi.csv"
    assert main(["npmi", "--input", str(annotated), "--out", str(npmi_out)]) == 0
    assert npmi_out.read_text().splitlines()[0].startswith("topic,")

    report_out = tmp_path / "report.csv"
    assert main(["report", "--input", str(annotated), "--out", str(report_out)]) == 0
    lines = report_out.read_text().splitlines()
    assert lines[0] == "topic,share"
    shares = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(a >= b for a, b in zip(shares, shares[1:]))
