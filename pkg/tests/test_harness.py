import json
import math

import pytest

from bkl.branching_law import ConfigurationError
from bkl.cli import main
from bkl.config import SCHEMA_VERSION, load_spec, spec_from_dict
from bkl.harness import MC_HEADER, run

BASE = {"schema_version": SCHEMA_VERSION, "model": {"drift": 0.0, "gaussian_var": 1.0},
        "law": {"p": [0.6, 0.0, 0.4], "beta": 1.0}, "x": [1.0], "n": 1000, "seed": 4}


def spec(**kw):
    return spec_from_dict({**BASE, **kw})


def test_config_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        spec(kind="survival", bogus=1)
    with pytest.raises(ConfigurationError):
        spec_from_dict({**BASE, "kind": "survival", "schema_version": 99})
    with pytest.raises(ConfigurationError):
        spec(kind="teleport")
    with pytest.raises(ConfigurationError):
        spec(kind="survival", t=[2.0, 1.0])
    with pytest.raises(ConfigurationError):
        spec(kind="survival", n=10)
    with pytest.raises(ConfigurationError):
        spec(kind="survival", model={"drift": 0.0, "volatility": 1.0})


def test_empty_t_grid_is_rejected():
    with pytest.raises(ConfigurationError):
        run(spec(kind="survival_zero_mean"))


def test_regime_tag_is_checked():
    with pytest.raises(ConfigurationError):
        run(spec(kind="survival_positive_mean", t=[1.0]))


def test_survival_rows_carry_scaling_and_prediction():
    table = run(spec(kind="survival_zero_mean", t=[1.0, 2.0]))
    assert table.header == MC_HEADER
    assert len(table.rows) == 2
    x, t, y, est, se, n, capped, seed, scaled, scaled_se, lo, hi, h = table.rows[1]
    assert scaled == pytest.approx(est * math.sqrt(2.0) * math.exp(0.2 * 2.0))
    assert lo == hi == pytest.approx(2 / 3 / math.sqrt(2 * math.pi))
    assert seed == 4 and n == 1000


def test_output_identical_across_workers(tmp_path):
    s = spec(kind="sim", t=[1.0, 2.0], y=[0.5, 1.0], n=20_000)
    a = run(s, workers=1, out=str(tmp_path / "a"))
    b = run(s, workers=2, out=str(tmp_path / "b"))
    fa = (tmp_path / "a" / f"sim_{s.spec_hash()}.csv").read_bytes()
    fb = (tmp_path / "b" / f"sim_{s.spec_hash()}.csv").read_bytes()
    assert fa == fb and a.to_csv() == b.to_csv()
    summary = json.loads((tmp_path / "a" / f"sim_{s.spec_hash()}.json").read_text())
    assert summary["spec_hash"] == s.spec_hash()


def test_seed_changes_hash():
    assert spec(kind="law").spec_hash() != spec(kind="law", seed=5).spec_hash()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigurationError):
        run(spec(kind="law"), out=str(blocker / "sub"))


def test_cli_law_and_run(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**BASE, "kind": "scale", "x": [1.0, 2.0], "q": [0.0]}))
    assert main(["law", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("quantity,arg,value") and "C_sub" in out
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    files = sorted(p.suffix for p in (tmp_path / "o").iterdir())
    assert files == [".csv", ".json"]
    assert load_spec(path).kind == "scale"


def test_cli_reports_errors(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**BASE, "surprise": True}))
    assert main(["law", "--config", str(path)]) == 2
    assert "unknown configuration keys" in capsys.readouterr().err
