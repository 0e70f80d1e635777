import os

import pytest

from spanparser.cli import main

TINY = """
data.train = {train}
data.dev = {dev}
out = {out}
lexical.word_dim = 12
lexical.char_dim = 6
lexical.char_hidden = 6
hidden = 10
ffn_hidden = 12
dropout = 0.0
epochs = 1
evals_per_epoch = 1
seed = 0
"""


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("data"))
    assert main(["gen", "--seed", "1", "--count", "35", "--out", d]) == 0
    return d


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = str(tmp_path_factory.mktemp("run"))
    cfg = os.path.join(out, "cfg")
    with open(cfg, "w") as fh:
        fh.write(TINY.format(train=f"{data_dir}/train.txt",
                             dev=f"{data_dir}/dev.txt", out=out))
    assert main(["train", "--config", cfg]) == 0
    return out


def test_gen_split_and_determinism(data_dir, tmp_path):
    sizes = {}
    for name in ("train.txt", "dev.txt", "test.txt"):
        with open(os.path.join(data_dir, name)) as fh:
            sizes[name] = len(fh.readlines())
    assert sizes == {"train.txt": 25, "dev.txt": 5, "test.txt": 5}
    again = str(tmp_path / "again")
    assert main(["gen", "--seed", "1", "--count", "35", "--out", again]) == 0
    for name in sizes:
        with open(os.path.join(data_dir, name)) as a, \
                open(os.path.join(again, name)) as b:
            assert a.read() == b.read()


def test_train_outputs_and_log_determinism(run_dir, data_dir, tmp_path):
    assert os.path.exists(os.path.join(run_dir, "model.best"))
    assert os.path.exists(os.path.join(run_dir, "config.resolved"))
    log1 = open(os.path.join(run_dir, "log.tsv")).read()
    out2 = str(tmp_path / "run2")
    cfg2 = str(tmp_path / "cfg2")
    with open(cfg2, "w") as fh:
        fh.write(TINY.format(train=f"{data_dir}/train.txt",
                             dev=f"{data_dir}/dev.txt", out=out2))
    assert main(["train", "--config", cfg2]) == 0
    assert open(os.path.join(out2, "log.tsv")).read() == log1


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = str(tmp_path / "bad")
    with open(cfg, "w") as fh:
        fh.write("epochz = 4\n")
    assert main(["train", "--config", cfg]) == 1
    assert "epochz" in capsys.readouterr().err


def test_override_flag_beats_config(run_dir, data_dir, tmp_path):
    out = str(tmp_path / "run3")
    cfg = str(tmp_path / "cfg3")
    with open(cfg, "w") as fh:
        fh.write(TINY.format(train=f"{data_dir}/train.txt",
                             dev=f"{data_dir}/dev.txt", out=out))
    assert main(["train", "--config", cfg, "-o", "encoder.variant=truncated",
                 "-o", "encoder.k=2"]) == 0
    resolved = open(os.path.join(out, "config.resolved")).read()
    assert "encoder.variant = truncated" in resolved
    assert "encoder.k = 2" in resolved


def test_bad_override_is_usage_error(tmp_path):
    assert main(["train", "-o", "nope=1"]) == 1
    assert main(["train", "-o", "malformed"]) == 1


def test_missing_data_is_data_error(tmp_path):
    out = str(tmp_path / "r")
    assert main(["train", "-o", "data.train=/nonexistent/x.txt",
                 "-o", "data.dev=/nonexistent/y.txt",
                 "-o", f"out={out}"]) == 2


def test_eval_gold_vs_gold(data_dir, capsys):
    gold = os.path.join(data_dir, "dev.txt")
    assert main(["eval", "--gold", gold, "--predicted", gold]) == 0
    assert capsys.readouterr().out.strip() == "1.00 1.00 1.00"


def test_eval_count_mismatch(data_dir, tmp_path):
    short = str(tmp_path / "short.txt")
    with open(os.path.join(data_dir, "dev.txt")) as fh:
        lines = fh.readlines()
    with open(short, "w") as fh:
        fh.writelines(lines[:-1])
    assert main(["eval", "--gold", os.path.join(data_dir, "dev.txt"),
                 "--predicted", short]) == 1


def test_parse_roundtrips_through_eval(run_dir, data_dir, tmp_path, capsys):
    model = os.path.join(run_dir, "model.best")
    sents = str(tmp_path / "sents.txt")
    with open(os.path.join(data_dir, "dev.txt")) as fh:
        n_lines = len(fh.readlines())
    # extract raw sentences from the dev trees
    from spanparser.cli import load_corpus
    dev = load_corpus(os.path.join(data_dir, "dev.txt"))
    with open(sents, "w") as fh:
        fh.writelines(" ".join(s.words) + "\n" for s in dev)
    pred = str(tmp_path / "pred.txt")
    assert main(["parse", "--model", model, "--input", sents,
                 "--out", pred]) == 0
    with open(pred) as fh:
        assert len(fh.readlines()) == n_lines
    # self-consistency: predicted trees evaluated against themselves
    assert main(["eval", "--gold", pred, "--predicted", pred]) == 0
    assert capsys.readouterr().out.strip() == "1.00 1.00 1.00"


def test_parse_independent_flag(run_dir, data_dir, tmp_path):
    model = os.path.join(run_dir, "model.best")
    sents = str(tmp_path / "s.txt")
    with open(sents, "w") as fh:
        fh.write("Mira chased the cat\n")
    pred = str(tmp_path / "p.txt")
    assert main(["parse", "--model", model, "--input", sents,
                 "--independent", "--out", pred]) == 0
    line = open(pred).read().strip()
    assert line.startswith("valid=true") or line.startswith("valid=false")


def test_parse_skips_empty_lines(run_dir, tmp_path, capsys):
    model = os.path.join(run_dir, "model.best")
    sents = str(tmp_path / "s.txt")
    with open(sents, "w") as fh:
        fh.write("Mira sleeps\n\nthe cat sleeps\n")
    assert main(["parse", "--model", model, "--input", sents]) == 0
    captured = capsys.readouterr()
    assert len(captured.out.strip().splitlines()) == 2
    assert "skipping empty line 2" in captured.err


def test_probe_parent_report(run_dir, data_dir, tmp_path):
    model = os.path.join(run_dir, "model.best")
    out = str(tmp_path / "probe")
    assert main(["probe-parent", "--model", model,
                 "-o", f"data.train={data_dir}/train.txt",
                 "-o", f"data.dev={data_dir}/dev.txt",
                 "-o", f"out={out}"]) == 0
    report = open(os.path.join(out, "reports", "parent_probe.csv")).read()
    assert "probe_dev_accuracy" in report
    assert "majority_dev_accuracy" in report


def test_probe_wordfeat_report(run_dir, tmp_path):
    model = os.path.join(run_dir, "model.best")
    out = str(tmp_path / "wf")
    assert main(["probe-wordfeat", "--model", model, "--count", "80",
                 "-o", f"out={out}"]) == 0
    report = open(os.path.join(out, "reports", "word_features.csv")).read()
    assert report.count("\n") == 26  # header + 25 features
    assert "suffix-ing" in report


def test_derivatives_report(run_dir, data_dir, tmp_path):
    model = os.path.join(run_dir, "model.best")
    out = str(tmp_path / "dv")
    assert main(["derivatives", "--model", model,
                 "-o", f"data.dev={data_dir}/dev.txt",
                 "-o", f"out={out}"]) == 0
    report = open(os.path.join(out, "reports", "derivatives.csv")).read()
    assert report.count("\n") == 41  # header + distances 1..40


def test_context_grid_subset(data_dir, tmp_path):
    out = str(tmp_path / "grid")
    assert main(["context-grid", "--ks", "2", "--ff", "2:1:1",
                 "-o", f"data.train={data_dir}/train.txt",
                 "-o", f"data.dev={data_dir}/dev.txt",
                 "-o", f"out={out}", "-o", "epochs=1",
                 "-o", "lexical.word_dim=12", "-o", "lexical.char_dim=6",
                 "-o", "lexical.char_hidden=6", "-o", "hidden=10",
                 "-o", "ffn_hidden=12", "-o", "dropout=0.0",
                 "-o", "evals_per_epoch=1"]) == 0
    report = open(os.path.join(out, "reports", "context_grid.csv")).read()
    assert "truncated" in report and "shuffled" in report \
        and "feedforward" in report


def test_ablate_lexical_report(data_dir, tmp_path):
    out = str(tmp_path / "abl")
    assert main(["ablate-lexical",
                 "-o", f"data.train={data_dir}/train.txt",
                 "-o", f"data.dev={data_dir}/dev.txt",
                 "-o", f"out={out}", "-o", "epochs=1",
                 "-o", "lexical.word_dim=12", "-o", "lexical.char_dim=6",
                 "-o", "lexical.char_hidden=6", "-o",
                 "lexical.char_only_hidden=8", "-o", "hidden=10",
                 "-o", "ffn_hidden=12", "-o", "dropout=0.0",
                 "-o", "evals_per_epoch=1"]) == 0
    report = open(os.path.join(out, "reports", "lexical_ablation.csv")).read()
    assert report.count("\n") == 6  # header + five modes
    assert "word_only" in report and "char_only" in report


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("gen", "train", "parse", "eval", "probe-parent",
                "probe-wordfeat", "derivatives", "context-grid",
                "ablate-lexical"):
        assert cmd in out
