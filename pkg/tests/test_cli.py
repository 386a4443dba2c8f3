import subprocess
import sys

import numpy as np
import pytest

from gembhash import container, dataset, evaluation, gemb
from gembhash.cli import main

SMALL = ["--n-samples", "600", "--n-classes", "4", "--dim", "24", "--latent-dim", "6", "--seed", "3"]


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "x.gemb"
    assert main(["synth", "--out", str(path), *SMALL]) == 0
    return path, tmp_path / "x.labels"


def _run(*argv):
    return main([str(a) for a in argv])


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gembhash", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "pipeline" in out.stdout


def test_embed_single_component(data, tmp_path, capsys):
    x, _ = data
    model, emb = tmp_path / "g.gemm", tmp_path / "z.gemb"
    assert _run("fit-gmm", "-i", x, "-n", 1, "--gamma", 0.9, "--out", model) == 0
    assert _run("embed", "-i", x, "-m", model, "-o", emb) == 0
    z = dataset.load(emb)
    assert z.d == 1 and np.all(z.data == 1.0)
    assert "embed: 600 x 1" in capsys.readouterr().out


def test_bic_sweep_six_rows(data, capsys):
    x, _ = data
    assert _run("fit-gmm", "-i", x, "--bic-sweep", "16,32,64", "--covariance", "both", "--gamma", 0.9,
                "--n-init", 1) == 0
    rows = [line for line in capsys.readouterr().out.splitlines() if line and line[0].isdigit()]
    assert len(rows) == 6
    assert {tuple(r.split("\t")[:2]) for r in rows} == {(n, k) for n in ("16", "32", "64")
                                                       for k in ("full", "diagonal")}


def test_bic_command(data, capsys):
    x, _ = data
    assert _run("bic", "-i", x, "-n", "4", "--covariance", "both", "--gamma", 0.9, "--n-init", 1) == 0
    out = capsys.readouterr().out
    assert "relative difference" in out


def _pipeline(x, labels, out_dir, *extra):
    return _run("pipeline", "-i", x, "--labels", labels, "--n-bits", 8, "--gamma", 0.9, "--n-init", 1,
                "--k", 50, "--artifacts", out_dir, "--out", out_dir / "report.txt", *extra)


def test_pipeline_byte_identical(data, tmp_path):
    x, labels = data
    a, b = tmp_path / "a", tmp_path / "b"
    assert _pipeline(x, labels, a) == 0
    assert _pipeline(x, labels, b) == 0
    for name in ("emb_db.gemb", "emb_query.gemb", "gemb+itq.db.gemc", "gemb+itq.query.gemc", "gemb.gemm"):
        assert (a / "trial0" / name).read_bytes() == (b / "trial0" / name).read_bytes()
    assert (a / "report.txt").read_text() == (b / "report.txt").read_text()


def test_pipeline_matches_individual_commands(data, tmp_path):
    x, labels = data
    run = tmp_path / "run"
    assert _pipeline(x, labels, run, "--seed", 5) == 0
    piped = evaluation.parse_report((run / "report.txt").read_text())

    s = tmp_path / "steps"
    s.mkdir()
    assert _run("split", "-i", x, "--labels", labels, "--seed", 5, "--out-prefix", s / "d") == 0
    assert _run("fit-gmm", "-i", s / "d.db.gemb", "--gamma", 0.9, "-n", 8, "--n-init", 1, "--seed", 5,
                "--out", s / "g.gemm") == 0
    for part in ("db", "query"):
        assert _run("embed", "-i", s / f"d.{part}.gemb", "-m", s / "g.gemm", "-o", s / f"z.{part}.gemb") == 0
    assert _run("fit-hash", "-i", s / "z.db.gemb", "-b", 8, "--seed", 5, "-o", s / "h.gemm") == 0
    for part in ("db", "query"):
        assert _run("encode", "-i", s / f"z.{part}.gemb", "-m", s / "h.gemm", "-o", s / f"c.{part}.gemc") == 0
    assert _run("evaluate", "--database", s / "c.db.gemc", "--db-labels", s / "d.db.labels",
                "--queries", s / "c.query.gemc", "--query-labels", s / "d.query.labels", "--k", 50,
                "-o", s / "report.txt") == 0
    stepwise = evaluation.parse_report((s / "report.txt").read_text())

    assert (s / "c.db.gemc").read_bytes() == (run / "trial0" / "gemb+itq.db.gemc").read_bytes()
    assert stepwise.values() == piped.values()
    assert stepwise.per_class == piped.per_class


def test_compare_and_trials(data, tmp_path):
    x, labels = data
    out = tmp_path / "r.txt"
    assert _run("evaluate", "-i", x, "--labels", labels, "--n-bits", 8, "--gamma", 0.9, "--n-init", 1,
                "--trials", 5, "--compare", "--k", 50, "-o", out, "--table", tmp_path / "t.tsv") == 0
    reports = evaluation.parse_reports(out.read_text())
    assert [r.label for r in reports] == ["gemb+itq", "itq"]
    for rep in reports:
        assert rep.n_trials == 5
        assert rep.map == pytest.approx(np.mean([t[0] for t in rep.per_trial]))
    assert len((tmp_path / "t.tsv").read_text().splitlines()) == 1 + 2 * 3


def test_auto_components_follow_bits(data, tmp_path):
    x, labels = data
    run = tmp_path / "auto"
    assert _run("pipeline", "-i", x, "--labels", labels, "--n-bits", 32, "--n-components", "auto",
                "--gamma", 0.9, "--n-init", 1, "--max-iters", 5, "--hasher", "none", "--artifacts", run) == 0
    model = container.load_one(run / "trial0" / "gemb.gemm", gemb.GembModel)
    assert model.n_components == 32


def test_perfect_toy_codes(tmp_path):
    from gembhash.hashing import BinaryCodes, save_codes

    bits = np.array([[0] * 8] * 4 + [[1] * 8] * 4, bool)
    save_codes(BinaryCodes.from_bits(bits), tmp_path / "db.gemc")
    save_codes(BinaryCodes.from_bits(bits[[0, 4]]), tmp_path / "q.gemc")
    dataset.save_labels([0] * 4 + [1] * 4, tmp_path / "db.labels")
    dataset.save_labels([0, 1], tmp_path / "q.labels")
    assert _run("evaluate", "--database", tmp_path / "db.gemc", "--db-labels", tmp_path / "db.labels",
                "--queries", tmp_path / "q.gemc", "--query-labels", tmp_path / "q.labels", "--k", 4,
                "-o", tmp_path / "r.txt") == 0
    rep = evaluation.parse_report((tmp_path / "r.txt").read_text())
    assert rep.map == 100.0 and rep.precision_at_radius == 100.0


def test_config_file_and_flags(data, tmp_path):
    x, labels = data
    (tmp_path / "c.cfg").write_text("preset=cnn\nn_bits=16\nhasher=none\n")
    assert _run("pipeline", "-i", x, "--labels", labels, "--config", tmp_path / "c.cfg", "--n-bits", 4,
                "--n-init", 1, "--save-config", tmp_path / "resolved.cfg") == 0
    text = (tmp_path / "resolved.cfg").read_text()
    assert "n_bits=4\n" in text and "alpha=0.05\n" in text


def test_errors_exit_one(data, tmp_path, capsys):
    x, labels = data
    assert _run("fit-gmm", "-i", x, "-n", 5000, "--out", tmp_path / "g.gemm") == 1
    assert "error in gmm" in capsys.readouterr().err
    assert _run("embed", "-i", tmp_path / "missing.gemb", "-m", tmp_path / "g.gemm", "-o", tmp_path / "z") == 1
    assert _run("pipeline", "-i", x, "--labels", labels, "--n-bits", 64, "--n-components", 4,
                "--gamma", 0.5, "--n-init", 1) == 1
    assert "error in gemb+itq:fit-hash" in capsys.readouterr().err


def test_query_prints_ranking(tmp_path, capsys):
    from gembhash.hashing import BinaryCodes, save_codes

    save_codes(BinaryCodes.from_bits([[0, 0], [1, 1], [0, 1]]), tmp_path / "db.gemc")
    save_codes(BinaryCodes.from_bits([[1, 1]]), tmp_path / "q.gemc")
    assert _run("query", "--database", tmp_path / "db.gemc", "--queries", tmp_path / "q.gemc", "--top", 2) == 0
    assert capsys.readouterr().out.strip() == "0\t1:0 2:1"
