import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

from xyglass import __version__, campaign
from xyglass.cli import RC_CONFIG, RC_PARTIAL, _rich_table, app

runner = CliRunner()

TINY = {
    "schema": 1,
    "name": "tiny",
    "seed": 3,
    "lattices": [{"rows": 2, "cols": 3}],
    "w": [4.0],
    "realizations": 2,
    "initial": {"kind": "neel"},
    "times": {"kind": "log", "start": 0.1, "stop": 10, "num": 21},
    "analysis": {"qea": {}, "eta": {"window": [0.5, 10]}},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def test_version():
    res = runner.invoke(app, ["--version"])
    assert res.exit_code == 0
    assert __version__ in res.output


def test_simulate(config, tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(app, ["simulate", "-c", str(config), "-o", str(out)])
    assert res.exit_code == 0, res.output
    assert "2/2 tasks done" in res.output
    assert (out / "manifest.json").is_file()
    assert (out / "summary" / "qea.csv").is_file()


def test_simulate_seed_override(config, tmp_path):
    res = runner.invoke(app, ["simulate", "-c", str(config), "-o", str(tmp_path / "run"), "--seed", "11"])
    assert res.exit_code == 0, res.output
    assert campaign.load_config(tmp_path / "run" / "config.yaml").seed == 11


def test_simulate_bad_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({**TINY, "colour": "red"}))
    res = runner.invoke(app, ["simulate", "-c", str(p)])
    assert res.exit_code == RC_CONFIG
    assert "Invalid config" in res.output


def test_simulate_missing_config(tmp_path):
    res = runner.invoke(app, ["simulate", "-c", str(tmp_path / "nope.yaml")])
    assert res.exit_code == RC_CONFIG


def test_simulate_partial(config, tmp_path, monkeypatch):
    def fail(cfg, task, outdir):
        raise RuntimeError("boom")

    monkeypatch.setattr(campaign, "run_task", fail)
    res = runner.invoke(app, ["simulate", "-c", str(config), "-o", str(tmp_path / "run")])
    assert res.exit_code == RC_PARTIAL
    assert "boom" in res.output


def test_analyze(config, tmp_path):
    out = tmp_path / "run"
    runner.invoke(app, ["simulate", "-c", str(config), "-o", str(out)])
    (out / "summary" / "qea.csv").unlink()

    res = runner.invoke(app, ["analyze", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "summary" / "qea.csv").is_file()


def test_analyze_no_config(tmp_path):
    res = runner.invoke(app, ["analyze", str(tmp_path)])
    assert res.exit_code == RC_CONFIG


def test_thresholds(tmp_path):
    out = tmp_path / "th.csv"
    res = runner.invoke(
        app,
        ["thresholds", "-K", "3", "-K", "4", "-s", "upper_limit", "--channel", "relaxation", "-o", str(out)],
    )
    assert res.exit_code == 0, res.output
    assert "Thresholds, upper limit" in res.output
    df = pd.read_csv(out)
    assert df["K"].tolist() == [3, 4]
    assert (tmp_path / "th.schema.json").is_file()


def test_thresholds_bad_scheme():
    res = runner.invoke(app, ["thresholds", "-s", "guess"])
    assert res.exit_code == RC_CONFIG
    assert "invalid scheme" in res.output


def test_pair_approx():
    res = runner.invoke(
        app, ["pair-approx", "--rows", "2", "--cols", "3", "-w", "20", "-r", "3", "--t-max", "1", "--num", "5"]
    )
    assert res.exit_code == 0, res.output
    assert "Typical R on" in res.output
    assert "B = 7 bonds" in res.output


def test_pair_approx_no_exact():
    res = runner.invoke(app, ["pair-approx", "--rows", "3", "--cols", "3", "-r", "5", "--no-exact"])
    assert res.exit_code == 0, res.output
    assert "B = 12 bonds" in res.output


def test_pair_approx_bad_lattice():
    res = runner.invoke(app, ["pair-approx", "--rows", "0"])
    assert res.exit_code == RC_CONFIG


def test_preset_list():
    res = runner.invoke(app, ["preset", "--list"])
    assert res.exit_code == 0
    assert res.output.split() == campaign.list_presets()


def test_preset_show():
    res = runner.invoke(app, ["preset", "fig3-desk", "--show"])
    assert res.exit_code == 0
    doc = yaml.safe_load(res.output)
    assert campaign.parse_config(doc) == campaign.load_preset("fig3-desk")


@pytest.mark.parametrize("args", [["fig9"], []])
def test_preset_invalid(args):
    res = runner.invoke(app, ["preset", *args])
    assert res.exit_code == RC_CONFIG


@pytest.mark.slow
def test_preset_tables(tmp_path):
    res = runner.invoke(app, ["preset", "si-tables", "-o", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "summary" / "thresholds-upper_limit.csv").is_file()


def test_rich_table_cells_with_spaces():
    from rich.console import Console

    df = pd.DataFrame({"channel": ["two words", "relaxation"], "j": [0.0186, float("nan")]})
    table = _rich_table(df, title="t", float_format="%.3g", column_info=False)
    assert [c.header for c in table.columns] == ["channel", "j"]
    assert table.row_count == 2

    con = Console(width=80)
    with con.capture() as cap:
        con.print(table)
    out = cap.get()
    assert "two words" in out
    assert "0.0186" in out
    assert "NaN" in out
