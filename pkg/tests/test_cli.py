import csv

import pytest

from momentpic.cli import (
    EXIT_RUNTIME,
    EXIT_SUCCESS,
    EXIT_USAGE,
    archive_name,
    checkpoint_name,
    cli_dispatch,
)


@pytest.fixture
def an_out_dir(tmp_path):
    return tmp_path / "out"


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_names():
    assert checkpoint_name(12) == "checkpoint_000012.ipkc"
    assert archive_name(3) == "archive_000003.gmma"


def test_run(a_config_file, an_out_dir, capsys):
    status = cli_dispatch(
        ["run", str(a_config_file), "--out", str(an_out_dir), "--cycles", "2",
         "--checkpoint-every", "1"]
    )
    assert status == EXIT_SUCCESS
    assert (an_out_dir / "records.sqlite").exists()
    assert (an_out_dir / checkpoint_name(1)).exists()
    assert (an_out_dir / checkpoint_name(2)).exists()
    assert not list(an_out_dir.glob("archive_*"))
    rows = _read_csv(an_out_dir / "diagnostics.csv")
    assert [row["cycle"] for row in rows] == ["1", "2"]
    assert "SimState at cycle 2" in capsys.readouterr().out


def test_run_uses_configured_cycles(a_config_file, an_out_dir):
    assert cli_dispatch(["run", str(a_config_file), "--out", str(an_out_dir)]) == EXIT_SUCCESS
    assert (an_out_dir / checkpoint_name(3)).exists()
    assert not (an_out_dir / checkpoint_name(2)).exists()


def test_resume(a_config_file, an_out_dir):
    args = ["run", str(a_config_file), "--out", str(an_out_dir)]
    assert cli_dispatch(args + ["--cycles", "2"]) == EXIT_SUCCESS
    resume = ["--resume", str(an_out_dir / checkpoint_name(2)), "--cycles", "1"]
    assert cli_dispatch(args + resume) == EXIT_SUCCESS
    assert (an_out_dir / checkpoint_name(3)).exists()
    rows = _read_csv(an_out_dir / "diagnostics.csv")
    assert [row["cycle"] for row in rows] == ["1", "2", "3"]

    # resuming from an earlier checkpoint drops the later rows
    assert cli_dispatch(args + ["--resume", str(an_out_dir / checkpoint_name(2)),
                                "--cycles", "0"]) == EXIT_SUCCESS
    rows = _read_csv(an_out_dir / "diagnostics.csv")
    assert [row["cycle"] for row in rows] == ["1", "2"]


@pytest.mark.parametrize(
    "argv",
    [
        ["fly"],
        ["run"],
        ["run", "does_not_exist.ini"],
        ["run", "--cycles", "-1", "x.ini"],
        ["analyze"],
    ],
)
def test_usage_errors(argv):
    assert cli_dispatch(argv) == EXIT_USAGE


def test_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ndims = 5 5 5\nlengths = 1 1 1\n\n[time]\ndt = -1\n")
    assert cli_dispatch(["run", str(bad), "--out", str(tmp_path / "out")]) == EXIT_RUNTIME
    assert "Error:" in capsys.readouterr().err


def test_compress_then_analyze(a_config_file, an_out_dir, tmp_path, capsys):
    assert cli_dispatch(
        ["run", str(a_config_file), "--out", str(an_out_dir), "--cycles", "4",
         "--compress-every", "1"]
    ) == EXIT_SUCCESS
    archives = sorted(an_out_dir.glob("archive_*.gmma"))
    assert [a.name for a in archives] == [archive_name(c) for c in range(1, 5)]

    analysis = tmp_path / "analysis"
    assert cli_dispatch(
        ["analyze", *[str(a) for a in archives], "--bins", "8", "--out", str(analysis)]
    ) == EXIT_SUCCESS
    metrics = _read_csv(analysis / "metrics.csv")
    assert len(metrics) == 8
    assert metrics[0]["kl_prev"] == ""
    changes = _read_csv(analysis / "changepoints.csv")
    assert sorted((c["species"], c["metric"]) for c in changes) == [
        ("0", "anisotropy"), ("0", "entropy"), ("1", "anisotropy"), ("1", "entropy")
    ]

    archive = tmp_path / "final.gmma"
    assert cli_dispatch(
        ["compress", str(an_out_dir / checkpoint_name(4)), "--bins", "8",
         "--components", "2", "--out", str(archive)]
    ) == EXIT_SUCCESS
    assert "Wrote 2 records" in capsys.readouterr().out
    assert cli_dispatch(
        ["analyze", str(archive), "--bins", "8", "--out", str(tmp_path / "single")]
    ) == EXIT_SUCCESS
    assert len(_read_csv(tmp_path / "single" / "metrics.csv")) == 2
    assert _read_csv(tmp_path / "single" / "changepoints.csv") == []


def test_analyze_broken_archive(tmp_path):
    broken = tmp_path / "broken.gmma"
    broken.write_bytes(b"GMMA")
    assert cli_dispatch(["analyze", str(broken), "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_checkpoint_dump(a_config_file, an_out_dir, tmp_path, capsys):
    cli_dispatch(["run", str(a_config_file), "--out", str(an_out_dir), "--cycles", "1"])
    capsys.readouterr()
    assert cli_dispatch(["checkpoint-dump", str(an_out_dir / checkpoint_name(1))]) == EXIT_SUCCESS
    out = capsys.readouterr().out
    assert "version:      1" in out
    assert "cycle:        1" in out

    not_a_checkpoint = tmp_path / "x.ipkc"
    not_a_checkpoint.write_bytes(b"\0" * 100)
    assert cli_dispatch(["checkpoint-dump", str(not_a_checkpoint)]) == EXIT_RUNTIME
