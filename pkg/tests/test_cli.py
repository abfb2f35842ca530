import hashlib
import json

import pytest
import yaml

from instructner import cli
from instructner.cli import RunConfig, main
from instructner.corpus import write_conll
from instructner.errors import TrainingError, ValidationError
from instructner.fixtures import write_fixture_world


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    write_fixture_world(d, n_train=40, n_dev=20, n_test=20)
    return d


@pytest.fixture(scope="module")
def synthesized(world_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    args = ["synthesize", "--registry", str(world_dir / "registry.yaml"),
            "--kb", str(world_dir / "kb.tsv"), "--seed", "3"]
    assert main(args + ["--out", str(out / "a")]) == 0
    assert main(args + ["--out", str(out / "b")]) == 0
    return out


def digest_tree(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.rglob("*"))
            if p.is_file()}


def test_prepare_two_blocks(world_dir, tmp_path, capsys):
    code = main(["prepare", "--registry", str(world_dir / "registry.yaml"),
                 "--out", str(tmp_path)])
    assert code == 0
    assert capsys.readouterr().out.count("== ") == 2
    assert "config_hash=" in (tmp_path / "corpus_stats.tsv").read_text()


def test_prepare_missing_file(tmp_path, capsys):
    reg = tmp_path / "r.yaml"
    reg.write_text("datasets:\n  X: {entity_type: Gene, train: gone.conll}\n")
    assert main(["prepare", "--registry", str(reg), "--out", str(tmp_path / "o")]) == 1
    assert "gone.conll" in capsys.readouterr().err


def test_prepare_lists_iob_violations(tmp_path, capsys):
    (tmp_path / "bad.conll").write_text("a\tO\nb\tI\n\n")
    (tmp_path / "bad2.conll").write_text("a\tI\n\n")
    reg = tmp_path / "r.yaml"
    reg.write_text("datasets:\n  X: {entity_type: Gene, train: bad.conll, dev: bad2.conll}\n")
    assert main(["prepare", "--registry", str(reg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "X/train" in err and "X/dev" in err and "sentence 0" in err
    assert main(["prepare", "--registry", str(reg), "--lenient", "--out",
                 str(tmp_path / "o")]) == 0


def test_index_embeds_meta(world_dir, tmp_path):
    assert main(["index", "--kb", str(world_dir / "kb.tsv"), "--out", str(tmp_path),
                 "--seed", "4"]) == 0
    header = json.loads((tmp_path / "index.blob").read_bytes().split(b"\n", 1)[0])
    meta = header["header"]["meta"]
    assert meta["seed"] == 4 and meta["template_version"] == "v1" and meta["config_hash"]


def test_synthesize_byte_identical(synthesized):
    a, b = digest_tree(synthesized / "a"), digest_tree(synthesized / "b")
    assert a == b
    assert set(a) == {"dbr.jsonl", "dbr_random.jsonl", "dbr_stats.tsv"}
    meta = json.loads((synthesized / "a" / "dbr.jsonl").read_text().splitlines()[0])
    assert meta["seed"] == 3 and meta["kind"] == "curated"


def test_synthesize_with_prebuilt_index(world_dir, synthesized, tmp_path):
    assert main(["index", "--kb", str(world_dir / "kb.tsv"), "--out", str(tmp_path / "i"),
                 "--seed", "3"]) == 0
    assert main(["synthesize", "--registry", str(world_dir / "registry.yaml"),
                 "--kb", str(world_dir / "kb.tsv"), "--index", str(tmp_path / "i/index.blob"),
                 "--seed", "3", "--out", str(tmp_path / "s")]) == 0
    # the config hash differs (the index path is part of the config), samples do not
    samples = lambda p: p.read_text().splitlines()[1:]
    assert samples(tmp_path / "s/dbr.jsonl") == samples(synthesized / "a/dbr.jsonl")


def test_stats_density(world_dir, synthesized, tmp_path):
    assert main(["stats", "--registry", str(world_dir / "registry.yaml"),
                 "--dbr", str(synthesized / "a/dbr.jsonl"), "--out", str(tmp_path)]) == 0
    rows = [line.split("\t") for line in (tmp_path / "stats.tsv").read_text().splitlines()
            if not line.startswith("#")]
    header, body = rows[0], rows[1:]
    assert len(body) == 2
    for r in body:
        rec = dict(zip(header, r))
        assert float(rec["avg_positive_dbr"]) > float(rec["avg_entities_original"])
    assert (tmp_path / "entity_density.png").stat().st_size > 0
    assert (tmp_path / "token_length.png").stat().st_size > 0


@pytest.fixture(scope="module")
def perfect(world_dir, tmp_path_factory):
    """Checkpoint trained to memorise a separable corpus used for every split."""
    from instructner.fixtures import build_world, separable_corpus

    d = tmp_path_factory.mktemp("sep")
    write_conll(d / "sep.conll", separable_corpus(build_world(), n=15))
    (d / "reg.yaml").write_text(yaml.safe_dump({"datasets": {"SEP": {
        "entity_type": "Disease", "train": "sep.conll", "dev": "sep.conll",
        "test": "sep.conll"}}}))
    cfg = d / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"registry": "reg.yaml",
                                   "model": {"adapter": None, "dim": 32},
                                   "train": {"include_dbr": "off", "epochs": 12,
                                             "learning_rate": 2e-3}}))
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "1",
                     "--out", str(d / run)]) == 0
    return d


def test_train_deterministic_and_meta(perfect):
    a, b = digest_tree(perfect / "a"), digest_tree(perfect / "b")
    assert a == b
    assert {"checkpoint.blob", "train_log.jsonl", "dev_f1.tsv", "dev_f1.png"} <= set(a)
    meta = json.loads((perfect / "a/train_log.jsonl").read_text().splitlines()[0])
    assert meta["seed"] == 1 and meta["template_version"] == "v1"


def test_evaluate_perfect_checkpoint(perfect, tmp_path, capsys):
    code = main(["evaluate", "--checkpoint", str(perfect / "a/checkpoint.blob"),
                 "--registry", str(perfect / "reg.yaml"), "--out", str(tmp_path)])
    assert code == 0
    recs = [json.loads(x) for x in (tmp_path / "eval_test_named.jsonl").read_text().splitlines()]
    ds = next(r for r in recs if r["record"] == "dataset")
    assert ds["f1"] == 1.0
    assert "100.00" in capsys.readouterr().out


def test_predict(perfect, tmp_path):
    inp = tmp_path / "in.txt"
    inp.write_text("we studied kamilitis in mice .\n\nthe cohort was small .\n")
    code = main(["predict", "--checkpoint", str(perfect / "a/checkpoint.blob"),
                 "--input", str(inp), "--entity-type", "Disease", "--mode", "named",
                 "--dataset-name", "SEP", "--out", str(tmp_path / "p")])
    assert code == 0
    lines = (tmp_path / "p/predictions.jsonl").read_text().splitlines()
    assert len(lines) == 3
    first = json.loads(lines[1])
    assert first["spans"] == [{"start": 2, "end": 3, "text": "kamilitis"}]
    assert main(["predict", "--checkpoint", str(perfect / "a/checkpoint.blob"),
                 "--input", str(inp), "--out", str(tmp_path / "p")]) == 1


def test_inputs_not_mutated(world_dir, synthesized, tmp_path):
    before = digest_tree(world_dir)
    main(["stats", "--registry", str(world_dir / "registry.yaml"),
          "--dbr", str(synthesized / "a/dbr.jsonl"), "--out", str(tmp_path)])
    assert digest_tree(world_dir) == before


def test_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train: {epochs: 3, batch_size: 4}\nseed: 9\n")
    assert RunConfig.build()["train"]["epochs"] == 20
    rc = RunConfig.build(str(cfg))
    assert rc["train"]["epochs"] == 3 and rc.seed == 9
    rc = RunConfig.build(str(cfg), {"train.epochs": 2, "seed": None})
    assert rc["train"]["epochs"] == 2 and rc["train"]["batch_size"] == 4 and rc.seed == 9


def test_config_hash_ignores_out_only(tmp_path):
    a = RunConfig.build(None, {"out": "x"})
    b = RunConfig.build(None, {"out": "y"})
    c = RunConfig.build(None, {"seed": 2})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("trian: {epochs: 3}\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "trian" in capsys.readouterr().err
    with pytest.raises(ValidationError):
        RunConfig.build(str(tmp_path / "missing.yaml"))


def test_usage_errors_exit_1():
    assert pytest.raises(SystemExit, main, ["nonsense"]).value.code == 1


def test_runtime_failure_exit_2(perfect, monkeypatch, tmp_path):
    def boom(*a, **k):
        raise TrainingError("non-finite loss", 3, "SEP:train:0")

    monkeypatch.setattr(cli, "train", boom)
    code = main(["train", "--config", str(perfect / "cfg.yaml"), "--out", str(tmp_path)])
    assert code == 2


def test_dbr_kind_mismatch(world_dir, synthesized, tmp_path):
    code = main(["train", "--registry", str(world_dir / "registry.yaml"),
                 "--dbr", str(synthesized / "a/dbr_random.jsonl"), "--include-dbr", "curated",
                 "--epochs", "1", "--out", str(tmp_path)])
    assert code == 1
