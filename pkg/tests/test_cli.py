import pytest

from fngram import corpus, data_path
from fngram.cli import run


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "dialog.txt").write_text("hello there\thi how are you\tfine thanks\n", encoding="utf-8")
    return tmp_path


def run_ok(argv):
    assert run([str(a) for a in argv]) == 0


def build_toy(tmp_path):
    run_ok(["build-vocab", "--corpus", data_path("toy_corpus.txt"), "--out", tmp_path / "vocab.txt",
            "--max-size", 200])
    run_ok(["prepare", "--corpus", data_path("toy_corpus.txt"), "--vocab", tmp_path / "vocab.txt",
            "--out", tmp_path / "toy.shard", "--mode", "span", "--seed", 0])


def pretrain(tmp_path, out, steps, *extra):
    run_ok(["pretrain", "--config", data_path("toy.cfg"), "--vocab", tmp_path / "vocab.txt",
            "--shard", tmp_path / "toy.shard", "--out", out, "--steps", steps, *extra])


def test_usage_errors(capsys):
    assert run(["prepare", "--bogus"]) == 1
    assert run(["no-such-command"]) == 1
    assert run([]) == 1
    assert run(["generate", "--checkpoint", "x", "--vocab", "v", "--input", "i", "--output", "o",
                "--beam", "0"]) == 1


def test_unreadable_file_is_data_error(tmp_path):
    assert run(["build-vocab", "--corpus", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "v")]) == 2


def test_prepare_dialog_three_turns(workdir, capsys):
    run_ok(["build-vocab", "--corpus", workdir / "dialog.txt", "--out", workdir / "vocab.txt"])
    run_ok(["prepare", "--corpus", workdir / "dialog.txt", "--vocab", workdir / "vocab.txt",
            "--out", workdir / "d.shard", "--mode", "dialog"])
    records = corpus.read_shard(workdir / "d.shard")
    assert len(records) == 2
    assert "records\t2" in capsys.readouterr().out


def test_prepare_dialog_rejects_single_turn(workdir):
    (workdir / "bad.txt").write_text("lonely\n", encoding="utf-8")
    run_ok(["build-vocab", "--corpus", workdir / "dialog.txt", "--out", workdir / "vocab.txt"])
    assert run(["prepare", "--corpus", str(workdir / "bad.txt"), "--vocab", str(workdir / "vocab.txt"),
                "--out", str(workdir / "d.shard"), "--mode", "dialog"]) == 2


def test_prepare_is_reproducible(tmp_path):
    build_toy(tmp_path)
    first = (tmp_path / "toy.shard").read_bytes()
    build_toy(tmp_path)
    assert (tmp_path / "toy.shard").read_bytes() == first
    packed = tmp_path / "packed.shard"
    run_ok(["prepare", "--corpus", data_path("toy_corpus.txt"), "--vocab", tmp_path / "vocab.txt",
            "--out", packed, "--pack", "--seed", 1])
    assert len(corpus.read_shard(packed)) == 2  # one 700-ish token stream cut at 512


def test_pretrain_logs_and_resume_is_bitwise(tmp_path, capsys):
    build_toy(tmp_path)
    capsys.readouterr()
    pretrain(tmp_path, tmp_path / "straight.ck", 6, "--set", "log_every=2", "--set", "batch_size=8")
    out = capsys.readouterr().out.strip().splitlines()
    assert [line.split("\t")[0] for line in out] == ["2", "4", "6"]
    assert all(float(line.split("\t")[1]) > 0 for line in out)
    pretrain(tmp_path, tmp_path / "half.ck", 3, "--set", "batch_size=8", "--set", "log_every=2")
    run_ok(["pretrain", "--resume", tmp_path / "half.ck", "--shard", tmp_path / "toy.shard",
            "--out", tmp_path / "resumed.ck", "--steps", 6])
    assert (tmp_path / "resumed.ck").read_bytes() == (tmp_path / "straight.ck").read_bytes()


def test_generate_then_score_identity(tmp_path, capsys):
    build_toy(tmp_path)
    pretrain(tmp_path, tmp_path / "m.ck", 2, "--figure", tmp_path / "loss.png")
    assert (tmp_path / "loss.png").stat().st_size > 0
    sources = tmp_path / "src.txt"
    sources.write_text("the cat sat\nbirds sing\n", encoding="utf-8")
    for beam in (1, 3):
        run_ok(["generate", "--checkpoint", tmp_path / "m.ck", "--vocab", tmp_path / "vocab.txt",
                "--input", sources, "--output", tmp_path / f"gen{beam}.txt", "--beam", beam, "--max-out", 8])
    lines = (tmp_path / "gen3.txt").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2 and sum(len(x) for x in lines) >= 4
    capsys.readouterr()
    run_ok(["score", "--candidates", tmp_path / "gen3.txt", "--references", tmp_path / "gen3.txt",
            "--vocab", tmp_path / "vocab.txt", "--out", tmp_path / "report.tsv", "--figure", tmp_path / "scores.png"])
    report = (tmp_path / "report.tsv").read_text(encoding="utf-8").splitlines()
    assert report[0].startswith("# tokenization: char")
    values = dict(line.split("\t") for line in report[1:])
    assert values["bleu-4"] == "1.000000"
    assert values["rouge-l"] == "1.000000"
    assert (tmp_path / "scores.png").stat().st_size > 0


def test_score_to_stdout_whitespace(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("a b c\n", encoding="utf-8")
    (tmp_path / "r.txt").write_text("a b c d\n", encoding="utf-8")
    run_ok(["score", "--candidates", tmp_path / "c.txt", "--references", tmp_path / "r.txt"])
    out = capsys.readouterr().out.splitlines()
    values = dict(line.split("\t") for line in out[1:])
    assert values["bleu-2"] == "0.716531"
    assert values["rouge-1"] == f"{2 * 0.75 / 1.75:.6f}"


def test_score_length_mismatch(tmp_path):
    (tmp_path / "c.txt").write_text("a\nb\n", encoding="utf-8")
    (tmp_path / "r.txt").write_text("a\n", encoding="utf-8")
    assert run(["score", "--candidates", str(tmp_path / "c.txt"), "--references", str(tmp_path / "r.txt")]) == 2


def test_finetune_from_checkpoint(tmp_path, workdir, capsys):
    build_toy(tmp_path)
    pretrain(tmp_path, tmp_path / "pre.ck", 2)
    run_ok(["prepare", "--corpus", workdir / "dialog.txt", "--vocab", tmp_path / "vocab.txt",
            "--out", tmp_path / "d.shard", "--mode", "dialog"])
    run_ok(["finetune", "--init", tmp_path / "pre.ck", "--shard", tmp_path / "d.shard",
            "--out", tmp_path / "ft.ck", "--steps", 3, "--set", "log_every=1", "--set", "context_side=left"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-3:][0].startswith("1\t") and lines[-1].startswith("3\t")


def test_corrupt_checkpoint_exit_code(tmp_path):
    (tmp_path / "bad.ck").write_bytes(b"garbage")
    (tmp_path / "in.txt").write_text("x\n", encoding="utf-8")
    (tmp_path / "v.txt").write_text("", encoding="utf-8")
    assert run(["generate", "--checkpoint", str(tmp_path / "bad.ck"), "--vocab", str(tmp_path / "v.txt"),
                "--input", str(tmp_path / "in.txt"), "--output", str(tmp_path / "o.txt")]) == 2


@pytest.mark.slow
def test_bundled_config_pretrain_converges(tmp_path, capsys):
    build_toy(tmp_path)
    capsys.readouterr()
    pretrain(tmp_path, tmp_path / "m.ck", 500)
    last = capsys.readouterr().out.strip().splitlines()[-1].split("\t")
    assert last[0] == "500" and float(last[1]) < 0.1
