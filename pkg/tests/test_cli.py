import csv
import json
import math
import time

import numpy as np
import pytest

from poincare_rates.cli import main


def run(tmp_path, argv, config=None, name="cfg.json"):
    args = list(argv) + ["--out", str(tmp_path / "out")]
    if config is not None:
        p = tmp_path / name
        p.write_text(json.dumps(config))
        args += ["--config", str(p)]
    return main(args)


def read(tmp_path, name):
    with open(tmp_path / "out" / f"{name}.csv") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_rate_polynomial_slope(tmp_path):
    assert run(tmp_path, ["rate"], {"rate": {"beta": {"variant": "polynomial", "c0": 1.0, "c1": 2.0}}}) == 0
    header, data = read(tmp_path, "rate")
    assert header == ["n", "F_inverse", "slope", "envelope"]
    tail = data[data[:, 0] > 1e3]
    assert np.allclose(tail[:, 2], -2.0, atol=0.02)


def test_rate_strong_pi_exact(tmp_path):
    cfg = {"rate": {"beta": {"variant": "strong_pi", "a": 1.0, "c_p": 0.01}, "n_max": 1000, "rockner_wang": True}}
    assert run(tmp_path, ["rate"], cfg) == 0
    header, data = read(tmp_path, "rate")
    assert "rockner_wang" in header
    assert np.allclose(data[:, 3], np.exp(-0.01 * data[:, 0]), rtol=1e-14)


def test_malformed_key(tmp_path, capsys):
    code = run(tmp_path, ["rate"], {"rate": {"beta": {"variant": "polynomial", "c0": 1, "c9": 2}}})
    assert code != 0
    assert "rate.beta" in capsys.readouterr().err
    assert run(tmp_path, ["rate"], {"rate": {"nope": 1}}) != 0
    assert run(tmp_path, ["rate"], {"bogus": 1}) != 0


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"rate":\n {"a": 1,}}')
    assert main(["rate", "--config", str(p), "--out", str(tmp_path)]) != 0
    assert "line 2" in capsys.readouterr().err


def test_chain_exponent(tmp_path, capsys):
    assert run(tmp_path, ["chain"]) == 0
    out = capsys.readouterr().out
    fitted = float(out.split("fitted exponent:")[1].split()[0])
    assert fitted == pytest.approx(1 / 3, abs=0.02)


def test_chain_single_strong_link(tmp_path):
    cfg = {"chain": {"base": {"variant": "strong_pi", "a": 1.0, "c_p": 0.5},
                     "links": [{"kind": "compare", "beta": {"variant": "polynomial", "c0": 1.0, "c1": 1.0}}]}}
    assert run(tmp_path, ["chain"], cfg) == 0
    _, data = read(tmp_path, "beta")
    assert np.allclose(data[:, 1], np.minimum(4 / data[:, 0], 1.0), rtol=1e-12)


def test_chain_empty_is_identity(tmp_path):
    assert run(tmp_path, ["chain"], {"chain": {"links": []}}) == 0
    _, data = read(tmp_path, "beta")
    assert np.allclose(data[:, 1], 1 / data[:, 0], rtol=1e-14)


def test_chain_bad_link(tmp_path, capsys):
    assert run(tmp_path, ["chain"], {"chain": {"links": [{"kind": "what"}]}}) != 0
    assert "chain.links[0]" in capsys.readouterr().err


def test_imh_run(tmp_path):
    t0 = time.time()
    cfg = {"imh": {"replicas": 500, "n_max": 100}}
    assert run(tmp_path, ["imh", "--seed", "5"], cfg) == 0
    assert time.time() - t0 < 60
    _, data = read(tmp_path, "decay")
    assert np.all(data[:, 1] <= data[:, 3] + 3 * data[:, 2])
    first = (tmp_path / "out" / "decay.csv").read_bytes()
    assert run(tmp_path, ["imh", "--seed", "5", "--threads", "3"], cfg) == 0
    assert (tmp_path / "out" / "decay.csv").read_bytes() == first


def test_config_echo_round_trip(tmp_path):
    cfg = {"seed": 11, "imh": {"replicas": 300, "n_max": 20, "family": {"variant": "polypoly", "b1": 1, "b2": 2},
                               "threshold": 2.0}}
    assert run(tmp_path, ["imh"], cfg) == 0
    first = {n: (tmp_path / "out" / f"{n}.csv").read_bytes() for n in ("beta", "bound", "decay")}
    echo = json.loads((tmp_path / "out" / "config.json").read_text())
    echo["out"] = str(tmp_path / "again")
    p = tmp_path / "echo.json"
    p.write_text(json.dumps(echo))
    assert main(["imh", "--config", str(p)]) == 0
    for n, data in first.items():
        assert (tmp_path / "again" / f"{n}.csv").read_bytes() == data


def test_pm_avar_curve(tmp_path, capsys):
    assert run(tmp_path, ["pm", "avar-curve"]) == 0
    out = capsys.readouterr().out
    assert float(out.split("sigma_star:")[1].split()[0]) == pytest.approx(0.973, abs=0.01)
    _, data = read(tmp_path, "avar_curve")
    k = int(np.argmin(data[:, 3]))
    assert 0 < k < len(data) - 1


def test_pm_budget_and_mixing(tmp_path, capsys):
    assert run(tmp_path, ["pm", "budget"], {"pm": {"budget": {"epsilon": 1e-100}}}) == 0
    out = capsys.readouterr().out
    assert float(out.split("sigma_star:")[1].split()[0]) == pytest.approx(3.0, abs=0.1)
    assert run(tmp_path, ["pm", "mixing"]) == 0
    _, data = read(tmp_path, "mixing")
    assert np.all(data[:, 2] <= data[:, 3])


@pytest.mark.parametrize("task", ["lognormal-rate", "abc", "product"])
def test_pm_other_tasks(tmp_path, task):
    assert run(tmp_path, ["pm", task]) == 0


def test_pm_rejects_foreign_block(tmp_path):
    assert run(tmp_path, ["pm", "abc"], {"pm": {"budget": {}}}) != 0


def test_verify_small_battery(tmp_path, capsys):
    assert run(tmp_path, ["verify"], {"verify": {"chains": 3, "d": 6}}) == 0
    out = capsys.readouterr().out
    assert "violations: 0" in out


def test_verify_sabotage(tmp_path):
    assert run(tmp_path, ["verify"], {"verify": {"chains": 2, "d": 6, "beta_scale": 0.5}}) == 1
    dump = json.loads((tmp_path / "out" / "counterexamples.json").read_text())
    assert dump and dump[0]["violations"]


def test_table_format(tmp_path, capsys):
    assert run(tmp_path, ["pm", "budget", "--format", "table"]) == 0
    out = capsys.readouterr().out
    assert "# budget" in out and "sigma_star" in out
