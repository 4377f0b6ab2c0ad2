import csv
import io
import json
import shutil

import pytest
from hypothesis import given, strategies as st

from nls_modecheck.cli import (ConfigError, RunConfig, SchemaError, _dims, diff_reports, dumps,
                               main, parse_config)


@pytest.fixture(scope="module")
def coer_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    outs = [base / "a", base / "b"]
    for out in outs:
        assert main(["run", "--pipeline", "coercivity", "--d", "1", "--h", "0.1",
                     "--out", str(out)]) == 0
    return outs


def test_parse_config_comments_and_types():
    cfg = parse_config("# header\npipeline = h0-scan  # inline\nd = 1..3\n\nladder = 0.1, 0.05\n"
                       "r-max = 12\n")
    assert cfg == {"pipeline": "h0-scan", "d": [1, 2, 3], "ladder": [0.1, 0.05], "r_max": 12.0}


def test_parse_config_errors_name_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("pipeline = profile\n\nbogus = 1\n")
    assert exc.value.line == 3 and exc.value.key == "bogus"
    with pytest.raises(ConfigError) as exc:
        parse_config("d = x\n")
    assert exc.value.line == 1
    with pytest.raises(ConfigError):
        parse_config("just words\n")


def test_missing_keys():
    with pytest.raises(ConfigError, match="missing config key: d"):
        RunConfig.from_dict({"pipeline": "coercivity", "out": "x"})
    with pytest.raises(ConfigError, match="missing config key: p"):
        RunConfig.from_dict({"pipeline": "profile", "out": "x", "d": [1]})
    with pytest.raises(ConfigError, match="at least two rungs"):
        RunConfig.from_dict({"pipeline": "h0-scan", "out": "x", "d": [1], "ladder": [0.1]})


def test_missing_key_exit_code(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("pipeline = profile\nd = 1\nout = " + str(tmp_path / "o") + "\n")
    assert main(["run", str(conf)]) == 2
    assert "missing config key: p" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@given(st.integers(1, 12), st.integers(0, 12))
def test_dims_range(lo, width):
    assert _dims(f"{lo}..{lo + width}") == list(range(lo, lo + width + 1))
    assert _dims(f"{lo}, {lo + width}") == [lo, lo + width]


def test_dumps_is_deterministic():
    obj = {"b": [0.1, 1 / 3, float("nan")], "a": {"x": 1e-300}}
    assert dumps(obj) == dumps(json.loads(dumps(obj)))
    assert "0.33333333333333331" in dumps(obj)


def test_repeat_runs_bitwise_identical(coer_runs):
    a, b = coer_runs
    names = ("manifest.json", "coercivity.csv", "coercivity_by_d.csv", "summary.txt")
    before = {n: (a / n).read_bytes() for n in names}
    assert main(["run", "--pipeline", "coercivity", "--d", "1", "--h", "0.1", "--out", str(a)]) == 0
    assert {n: (a / n).read_bytes() for n in names} == before
    # a different output directory changes only the recorded config
    for n in names[1:]:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert diff_reports(a, b) == ("PASS", None)


def test_diff_names_perturbed_field(coer_runs, tmp_path, capsys):
    a = coer_runs[0]
    c = tmp_path / "c"
    shutil.copytree(a, c)
    rows = list(csv.reader(io.StringIO((c / "coercivity.csv").read_text())))
    col = rows[0].index("lam_min")
    rows[2][col] = repr(float(rows[2][col]) * (1 + 1e-6))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    (c / "coercivity.csv").write_text(buf.getvalue())
    assert diff_reports(a, c) == ("FAIL", "coercivity.csv:row 2:lam_min")
    assert diff_reports(a, c, tolerances={"coercivity.csv": 1e-4})[0] == "PASS"
    assert main(["diff", str(a), str(c)]) == 1
    assert "coercivity.csv:row 2:lam_min" in capsys.readouterr().out


def test_diff_schema_mismatch(coer_runs, tmp_path):
    a = coer_runs[0]
    c = tmp_path / "c"
    shutil.copytree(a, c)
    man = json.loads((c / "manifest.json").read_text())
    man["pipeline"] = "profile"
    (c / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(SchemaError):
        diff_reports(a, c)
    assert main(["diff", str(a), str(c)]) == 2


def test_failing_run_exit_code(tmp_path, capsys):
    # coarse short-domain ladder: the exit code must follow the manifest status
    out = tmp_path / "g"
    code = main(["run", "--pipeline", "ground-state", "--d", "1", "--ladder", "0.05,0.04",
                 "--r-max", "10", "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    assert code == (0 if man["status"] == "PASS" else 1)
    assert man["tool"] == "nls-modecheck" and man["pipeline"] == "ground-state"
