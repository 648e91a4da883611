import json

import numpy as np
import pytest

from invrisk.cli import run
from invrisk.inverse import InverseInstance
from invrisk.forward import ConstraintSet
from invrisk.io import atomic_write, config_hash, dumps, fmt, header_line, load_json


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 123456789.123456789):
        assert float(fmt(v)) == v
    assert fmt(float("inf")) == "inf"


def test_dumps_non_finite_is_null():
    assert json.loads(dumps({"a": float("nan"), "b": [1.5, np.float64(2.0)]})) == {"a": None, "b": [1.5, 2.0]}


def test_header_and_hash():
    assert config_hash({"a": "1", "b": "2"}) == config_hash({"b": "2", "a": "1"})
    assert header_line({"a": 1}).startswith("# invrisk 0.1.0 config_sha256=")


def test_atomic_write_and_load(tmp_path):
    p = atomic_write(tmp_path / "sub" / "x.json", header_line() + dumps({"k": 1}))
    assert load_json(p) == {"k": 1}
    assert [f.name for f in p.parent.iterdir()] == ["x.json"]


def _ini(path, **kv):
    lines = ["[run]", "schema_version = 1"] + [f"{k} = {v}" for k, v in kv.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def out(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv("INVRISK_OUTPUT_DIR", str(d))
    return d


@pytest.fixture
def moments_file(tmp_path, out):
    cfg = _ini(tmp_path / "ingest.ini", prices="pkg:robo_prices.csv", as_of="2016-06-06")
    assert run(["ingest", "--config", str(cfg)]) == 0
    return out / "moments.json"


def test_ingest_writes_returns_and_moments(moments_file, out):
    assert (out / "returns.csv").read_text().startswith("# invrisk 0.1.0 config_sha256=")
    assert len(load_json(moments_file)["c"]) == 6


def test_forward_and_frontier(tmp_path, moments_file, out):
    assert run(["forward", "--config", str(_ini(tmp_path / "f.ini", moments=moments_file, r="0.5"))]) == 0
    doc = load_json(out / "forward.json")
    assert sum(doc["x"]) == pytest.approx(1.0)
    assert max(doc["residuals"].values()) <= 1e-8
    assert run(["frontier", "--config", str(_ini(tmp_path / "fr.ini", moments=moments_file))]) == 0
    lines = (out / "frontier.csv").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1].startswith("r,risk,return,")
    assert len(lines) == 102


def test_forward_needs_one_of_r_or_z(tmp_path, moments_file):
    assert run(["forward", "--config", str(_ini(tmp_path / "f.ini", moments=moments_file))]) == 1


def test_unattainable_target_exit_3(tmp_path, moments_file, capsys):
    cfg = _ini(tmp_path / "f.ini", moments=moments_file, z="5")
    assert run(["forward", "--config", str(cfg), "--error-json"]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "InfeasibleTargetError" and err["exit_code"] == 3


def test_invert(tmp_path, out):
    inst = InverseInstance(np.eye(2), [1.0, 0.0], ConstraintSet.long_only_budget(2), [0.75, 0.25], 1.0, 1e4, 1e3)
    f = tmp_path / "inst.json"
    f.write_text(dumps(inst.to_dict()))
    assert run(["invert", "--config", str(_ini(tmp_path / "i.ini", instance=f))]) == 0
    doc = load_json(out / "inverse.json")
    assert doc["status"] == "optimal" and 0.4999 <= doc["r"] <= 0.5001


def test_learn_bundled_fixture(tmp_path, out):
    from invrisk.datasets import data_path

    cfg = tmp_path / "learn.ini"
    cfg.write_text(data_path("learn_robo.ini").read_text())
    assert run(["learn", "--config", str(cfg)]) == 0
    lines = (out / "risk_trace.csv").read_text().splitlines()
    cols = lines[1].split(",")
    assert cols[:3] == ["date", "r_mean", "r_std"]
    assert sum(c.startswith("r_l") for c in cols) == 10
    first = (out / "risk_trace.csv").read_bytes()
    assert run(["learn", "--config", str(cfg)]) == 0
    assert (out / "risk_trace.csv").read_bytes() == first


def test_learn_sector_space(tmp_path, out):
    cfg = _ini(tmp_path / "s.ini", prices="pkg:sector_prices.csv", portfolios="pkg:index_fund_holdings.csv",
               sector_map="pkg:sector_map.csv", space="sector", start="2019-06-28", end="2020-12-31",
               lookbacks="1 11")
    assert run(["learn", "--config", str(cfg)]) == 0
    assert len((out / "risk_trace.csv").read_text().splitlines()) == 2 + 7


def test_gridsearch_and_order(tmp_path, moments_file, out):
    cfg = _ini(tmp_path / "g.ini", moments=moments_file, M_grid="1000", lambda_grid="100 1000", n_samples=1,
               guesses="1", rounds=2)
    assert run(["gridsearch", "--config", str(cfg), "--jobs", "2"]) == 0
    assert len((out / "gridsearch_heatmap.csv").read_text().splitlines()) == 4
    cfg = _ini(tmp_path / "o.ini", moments=moments_file, n_samples=4, rounds=3)
    assert run(["validate-order", "--config", str(cfg)]) == 0
    assert "spearman" in load_json(out / "order.json")


def test_metrics(tmp_path, out):
    traces = []
    for label, v in (("VFINX", 0.1), ("VSTCX", 0.5), ("FDCAX", 0.2)):
        f = tmp_path / f"{label}.csv"
        f.write_text(f"# h\ndate,r_mean,r_std\n2020-01-31,{v},0\n")
        traces.append(f"{label}:{f}")
    cfg = _ini(tmp_path / "m.ini", traces=",".join(traces), betas="pkg:fund_betas.csv", beta_year=2020,
               moments="none.json", allocation="0.5 0.5")
    assert run(["metrics", "--config", str(cfg)]) == 1  # missing moments file
    cfg = _ini(tmp_path / "m.ini", traces=",".join(traces), betas="pkg:fund_betas.csv", beta_year=2020)
    assert run(["metrics", "--config", str(cfg)]) == 0
    doc = load_json(out / "metrics.json")
    assert doc["comparison"]["exact_match"] is True
    assert (out / "metrics.csv").read_text().splitlines()[1] == "label,mean_r,beta,rank_r,rank_beta"


def test_unknown_subcommand_exit_1(capsys):
    assert run(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert run(["forward", "--config", str(tmp_path / "missing.ini")]) == 1
    bad = tmp_path / "b.ini"
    bad.write_text("[run]\nschema_version = 2\n")
    assert run(["forward", "--config", str(bad)]) == 1
    assert run(["forward", "--config", str(_ini(tmp_path / "u.ini", moments="x", colour="red"))]) == 1
    assert run(["learn", "--config", str(_ini(tmp_path / "l.ini", prices="pkg:robo_prices.csv"))]) == 1


def test_data_error_exit_2(tmp_path):
    cfg = _ini(tmp_path / "d.ini", prices="pkg:robo_portfolios.csv")
    assert run(["ingest", "--config", str(cfg)]) == 2


def test_errors_pickle_with_context():
    import pickle

    from invrisk.errors import InfeasibleTargetError, ParseError, UnresolvedTickerError

    for exc in (InfeasibleTargetError(2.0, 0.0, 1.0), ParseError("bad", 4), UnresolvedTickerError(["Z"])):
        exc.args = (f"round 3: {exc}",)
        exc.round = 3
        back = pickle.loads(pickle.dumps(exc))
        assert type(back) is type(exc) and str(back) == str(exc) and back.round == 3
        assert back.to_dict() == exc.to_dict()
