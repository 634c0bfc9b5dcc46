import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fbcap.cli import (
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    ChannelSpec,
    cmd_capacity,
    cmd_curve,
    m_rule,
    parse_spec,
    run,
)

CHANNELS = Path(__file__).resolve().parents[1] / "channels"


def spec_file(tmp_path, **kw):
    d = {"name": "t", "numerator": [1.0, 0.4], "denominator": [1.0], "power": 10.0}
    d.update(kw)
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(d))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_m_rule():
    assert m_rule(4) == 64 and m_rule(40) == 512 and m_rule(0) == 8


def test_parse_spec_errors():
    with pytest.raises(Exception, match="line 3"):
        parse_spec('{"name": "x",\n "numerator": [1, 0.4]\n "power": 10}')
    with pytest.raises(Exception, match="power"):
        parse_spec('{"numerator": [1, 0.4]}')
    with pytest.raises(Exception, match="invalid channel"):
        parse_spec('{"numerator": [1, -1], "power": 1}')


def test_capacity_ma1(tmp_path, capsys):
    out = tmp_path / "cap.csv"
    assert run(["capacity", "--spec", str(CHANNELS / "ma1.json"), "--h", "4,8,20", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert list(rows[0]) == ["h", "m", "upper", "lower", "gap", "status"]
    last = rows[-1]
    assert last["m"] == "320"
    assert float(last["gap"]) <= 1e-2
    assert float(last["lower"]) - 5e-5 <= 1.8819 <= float(last["upper"]) + 5e-5
    # 17 significant digits
    assert len(last["upper"].replace(".", "").lstrip("0")) >= 15


def test_capacity_ma2():
    rows = cmd_capacity(ChannelSpec("ma2", (1, 0.1, 0.5), (1,), 10.0), [24])
    assert rows[0]["lower"] - 5e-5 <= 1.9194 <= rows[0]["upper"] + 5e-5


def test_white_refused(capsys):
    assert run(["capacity", "--spec", str(CHANNELS / "white.json")]) == EXIT_USAGE
    assert "nonfeedback capacity" in capsys.readouterr().err


def test_failed_row_continues(monkeypatch):
    import fbcap.cli as cli
    from fbcap.errors import NonConvergenceError

    real = cli.capacity_row

    def flaky(noise, P, h, m):
        if h == 2:
            raise NonConvergenceError("forced")
        return real(noise, P, h, m)

    monkeypatch.setattr(cli, "capacity_row", flaky)
    rows = cmd_capacity(ChannelSpec("ma1", (1, 0.4), (1,), 10.0), [2, 4])
    assert [r["status"] for r in rows] == ["failed", "ok"]
    assert run(["capacity", "--spec", str(CHANNELS / "ma1.json"), "--h", "2,4"]) == EXIT_NUMERIC


def test_corrupted_spec(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"name": "x",\n "numerator": [1, 0.4\n "power": 10}')
    assert run(["capacity", "--spec", str(p)]) == EXIT_USAGE
    assert "line 3" in capsys.readouterr().err
    assert run(["validate", "--spec", str(p)]) == EXIT_USAGE


def test_usage_errors(tmp_path):
    assert run(["bogus"]) == EXIT_USAGE
    assert run(["capacity"]) == EXIT_USAGE
    assert run(["capacity", "--spec", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert run(["capacity", "--spec", str(CHANNELS / "ma1.json"), "--h", "8", "--m", "3"]) == EXIT_USAGE


def test_synthesize_and_simulate(tmp_path, capsys):
    sch = tmp_path / "ma2.json"
    assert run(["synthesize", "--spec", str(CHANNELS / "ma2.json"), "--h", "24", "--out", str(sch)]) == EXIT_OK
    doc = json.loads(sch.read_text())
    poles = np.sort_complex([complex(*p) for p in doc["scheme"]["unstable_poles"]])
    assert np.allclose(poles, [-0.2057 - 1.9340j, -0.2057 + 1.9340j], atol=1e-3)
    assert doc["fir"]["scaled"] and len(doc["scheme"]["controller"]["denominator"]) >= 5
    for k in ("A_s", "B_s", "C_s", "A_u", "B_u", "C_u"):
        assert k in doc["scheme"]["split"]
    capsys.readouterr()

    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--scheme", str(sch), "--trials", "4000", "--horizon", "10,30,50,60", "--seed", "3"]
    assert run(args + ["--out", str(a)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [r["horizon"] for r in report] == [10, 30, 50, 60]
    assert run(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    pe = [float(r["p_e"]) for r in read_csv(a)]
    assert all(x2 <= x1 for x1, x2 in zip(pe, pe[1:]))
    assert run(["simulate", "--scheme", str(sch), "--trials", "50"]) == EXIT_USAGE


def test_synthesize_ma1(tmp_path):
    out = tmp_path / "ma1.json"
    assert run(["synthesize", "--spec", str(CHANNELS / "ma1.json"), "--h", "20", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["scheme"]["message_dim"] == 1
    assert doc["scheme"]["rate_certificate"] == pytest.approx(1.8819, abs=5e-3)


def test_synthesize_zero_power(tmp_path, capsys):
    assert run(["synthesize", "--spec", spec_file(tmp_path, power=1e-12), "--h", "8"]) == EXIT_NUMERIC
    assert "zero-rate controller" in capsys.readouterr().err


def test_curve(tmp_path):
    out = tmp_path / "curve.csv"
    assert run(["curve", "--spec", str(CHANNELS / "arma3.json"), "--powers", "1", "--h", "8", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 1 and list(rows[0])[:2] == ["P", "C"]
    assert run(["curve", "--spec", str(CHANNELS / "arma3.json"), "--powers", ""]) == EXIT_USAGE
    with pytest.raises(Exception):
        cmd_curve(ChannelSpec("x", (1, 0.4), (1,), 1.0), [], 4)


def test_validate(capsys):
    assert run(["validate"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "fbcap", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "capacity" in r.stdout
