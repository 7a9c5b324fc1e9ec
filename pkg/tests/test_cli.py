import json
import subprocess
import sys

import pytest

from commscope.cli import main
from commscope.core import fixture_names

TINY = ["--vocab", "8", "--hidden", "4", "--layers", "1", "--seq", "2", "--mbs", "1", "--heads", "2"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_predict_tiny_zero3(capsys):
    code, out, _ = run(capsys, "predict", *TINY, "--devices", "4", "--zero", "3", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["rows"][-1]["volume_elems"] == 684


def test_predict_table_and_out_file(capsys, tmp_path):
    dest = tmp_path / "p.csv"
    code, out, _ = run(capsys, "predict", "--model", "125m", "--devices", "8", "--format", "csv", "--out", str(dest))
    assert code == 0 and out == ""
    assert dest.read_text().startswith("component,kind,volume_elems")


def test_model_file(capsys, tmp_path):
    path = tmp_path / "m.toml"
    path.write_text("vocab_size = 8\nhidden = 4\nlayers = 1\nseq_len = 2\nmicro_batch = 1\nattn_heads = 2\n")
    lay = tmp_path / "l.toml"
    lay.write_text("devices = 4\nzero_stage = 3\n")
    a = run(capsys, "predict", "--model", str(path), "--layout", str(lay), "--format", "json")
    b = run(capsys, "predict", *TINY, "--devices", "4", "--zero", "3", "--format", "json")
    assert a == b
    # flags override file values
    code, out, _ = run(capsys, "predict", "--model", str(path), "--layout", str(lay), "--zero", "none", "--format", "json")
    assert json.loads(out)["rows"][-1]["volume_elems"] == 456


def test_schedule_views(capsys):
    code, out, _ = run(capsys, "schedule", *TINY, "--devices", "4", "--bucket", "100")
    assert code == 0 and "Allreduce" in out and "Broadcast" in out
    code, out, _ = run(capsys, "schedule", *TINY, "--devices", "4", "--view", "histogram", "--format", "csv")
    assert out.splitlines()[0] == "kind,bucket_lo_bytes,bucket_hi_bytes,count"
    code, out, _ = run(capsys, "schedule", *TINY, "--devices", "4", "--format", "trace", "--iteration", "3")
    lines = out.splitlines()
    assert lines[0] == "#commscope-trace v1"
    assert lines[-1] == "3|allreduce|608|4|backward|"


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", *TINY, "--devices", "4", "--zero", "3")
    assert code == 0
    assert "oracle match: exact" in out and "analytic match: exact" in out
    code, out, err = run(capsys, "validate", "--model", "19m", "--devices", "16", "--tp", "2", "--pp", "2",
                         "--format", "json")
    assert code == 0 and json.loads(out)["match"] == "exact"
    assert "analytic match: exact" in err


def test_parse_and_compare(capsys, tmp_path):
    trace = tmp_path / "z2.trace"
    assert main(["schedule", "--model", "19m", "--devices", "8", "--zero", "2", "--format", "trace",
                 "--out", str(trace)]) == 0
    code, out, _ = run(capsys, "parse", "--trace", str(trace), "--format", "json")
    doc = json.loads(out)
    assert code == 0 and {r["kind"] for r in doc["rows"]} == {"Allgather", "ReduceScatter", "Broadcast"}

    code, out, _ = run(capsys, "compare", "--trace", str(trace), "--model", "19m", "--devices", "8", "--zero", "2")
    assert code == 0 and "result: PASS" in out
    code, out, err = run(capsys, "compare", "--trace", str(trace), "--model", "19m", "--devices", "8", "--zero", "3")
    assert code == 2 and "Allgather" in err
    # a huge tolerance accepts the factor of two
    code, *_ = run(capsys, "compare", "--trace", str(trace), "--model", "19m", "--devices", "8", "--zero", "3",
                   "--tolerance", "1.5")
    assert code == 0


def test_sweep(capsys):
    code, out, err = run(capsys, "sweep", "--model", "1p3b", "--devices", "8", "--var", "tp",
                         "--values", "1,2,3,4", "--format", "csv")
    assert code == 0
    assert "tensor=3" in err
    assert any(line.startswith("3,,") for line in out.splitlines())


def test_estimate(capsys, tmp_path):
    code, out, _ = run(capsys, "estimate", "--fabric", "intra-node-illustrative", "--model", "125m",
                       "--devices", "8", "--compute-us", "100000")
    assert code == 0 and "illustrative" in out and "communication fraction" in out
    fab = tmp_path / "f.toml"
    fab.write_text("alpha_us = 10\nbeta_us_per_MiB = 8\n")
    trace = tmp_path / "t.trace"
    trace.write_text("0|allreduce|1048576|8||\n")
    code, out, _ = run(capsys, "estimate", "--fabric", str(fab), "--trace", str(trace), "--format", "json")
    assert json.loads(out)["rows"][-1]["total_us"] == 18


@pytest.mark.parametrize(
    "argv",
    [
        ["predict", "--model", "125m", "--devices", "8", "--tp", "8"],
        ["predict", "--model", "125m", "--devices", "12", "--tp", "8"],
        ["predict", "--model", "nosuch", "--devices", "8"],
        ["predict", "--hidden", "4", "--devices", "8"],
        ["predict", "--model", "19m"],
        ["predict", "--model", "19m", "--devices", "8", "--zero", "5"],
        ["predict", "--model", "19m", "--devices", "8", "--pp", "4"],
        ["parse", "--trace", "/nonexistent/trace"],
        ["estimate", "--fabric", "nope", "--model", "19m", "--devices", "2"],
        ["predict", "--model", "19m", "--devices", "two"],
        ["frobnicate"],
        ["sweep", "--model", "19m", "--devices", "2", "--var", "lr", "--values", "1"],
    ],
)
def test_validation_errors_exit_1(capsys, argv):
    code = None
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    _, err = capsys.readouterr()
    assert code == 1
    assert err.strip()


def test_tp8_message(capsys):
    code, _, err = run(capsys, "predict", "--model", "125m", "--devices", "8", "--tp", "8")
    assert code == 1 and "attn_heads=12" in err and "tensor=8" in err


def test_malformed_trace_names_line(capsys, tmp_path):
    trace = tmp_path / "bad.trace"
    trace.write_text("#commscope-trace v1\n0|allreduce|8|4||\n3|fooreduce|1|8||\n")
    code, _, err = run(capsys, "parse", "--trace", str(trace))
    assert code == 1 and "line 3" in err and "fooreduce" in err


LAYOUTS = [[], ["--zero", "1"], ["--zero", "2"], ["--zero", "3"], ["--tp", "2"], ["--pp", "2"],
           ["--tp", "2", "--pp", "2", "--zero", "1"]]


@pytest.mark.parametrize("fixture", fixture_names())
@pytest.mark.parametrize("layout", LAYOUTS, ids=lambda a: "-".join(a) or "ddp")
def test_every_fixture_and_layout(capsys, fixture, layout):
    code, out, _ = run(capsys, "predict", "--model", fixture, "--devices", "16", *layout, "--format", "json")
    assert code == 0
    assert json.loads(out)["rows"][-1]["volume_elems"] > 0


def test_console_script_is_byte_identical(tmp_path):
    argv = [sys.executable, "-m", "commscope.cli", "predict", "--model", "1p3b", "--devices", "64",
            "--tp", "4", "--pp", "2", "--zero", "1", "--format", "json"]
    first = subprocess.run(argv, capture_output=True, check=True).stdout
    second = subprocess.run(argv, capture_output=True, check=True).stdout
    assert first == second and first
