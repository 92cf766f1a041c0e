import json

import numpy as np
import pandas as pd
import pytest
import yaml

from xyglass import campaign
from xyglass.campaign import (
    ConfigError,
    RunManifest,
    dump_config,
    list_presets,
    load_config,
    load_preset,
    load_reference_thresholds,
    parse_config,
    run_campaign,
    run_thresholds,
    threshold_tables,
    to_jt,
)


def small_doc(**kws):
    doc = {
        "schema": 1,
        "name": "tiny",
        "seed": 7,
        "lattices": [{"rows": 2, "cols": 3}],
        "w": [4.0],
        "realizations": 2,
        "initial": {"kind": "midband", "count": 2, "threshold": 1.0},
        "times": {"kind": "log", "start": 0.1, "stop": 10, "num": 21},
        "analysis": {"qea": {"window": 11, "degree": 2}, "eta": {"window": [0.5, 10]}},
    }
    doc.update(kws)
    return doc


def test_to_jt():
    assert to_jt(2.5, None) == 2.5
    assert to_jt("30 ns", "5.3 MHz") == pytest.approx(2 * np.pi * 5.3e6 * 30e-9)
    assert to_jt("1 us", "1 MHz") == pytest.approx(2 * np.pi)


def test_to_jt_needs_coupling():
    with pytest.raises(ConfigError, match="coupling"):
        to_jt("30 ns", None)


def test_parse_minimal():
    cfg = parse_config(small_doc())
    assert cfg.lattices[0].build().n == 6
    assert cfg.w == (4.0,)
    assert len(cfg.tasks()) == 2
    assert cfg.output == "runs/tiny"
    np.testing.assert_allclose(cfg.times.values()[[0, -1]], [0.1, 10])


def test_parse_times_with_units():
    doc = small_doc(coupling="5 MHz", times={"kind": "linear", "start": "0 ns", "stop": "100 ns", "num": 11})
    cfg = parse_config(doc)
    assert cfg.times.stop == pytest.approx(2 * np.pi * 5e6 * 100e-9)


@pytest.mark.parametrize(
    "change, match",
    [
        ({"colour": "red"}, r"unknown key\(s\) \['colour'\] in config"),
        ({"schema": 2}, "schema"),
        ({"initial": {"kind": "random"}}, "initial.kind"),
        ({"initial": {"kind": "neel", "count": 3}}, "Néel"),
        ({"w": [-1.0]}, "nonnegative"),
        ({"realizations": 0}, "realizations"),
        ({"lattices": [{"rows": 8, "cols": 8}]}, "too large"),
        ({"lattices": [{"rows": 2, "cols": 2, "spacing": 1}]}, r"lattices\[0\]"),
        ({"times": {"kind": "log", "start": 0, "stop": 10, "num": 5}}, "positive start"),
        ({"times": {"kind": "log", "start": -1, "stop": 10, "num": 5}}, "positive start"),
        ({"times": {"kind": "log", "start": 1, "stop": -10, "num": 5}}, "positive start"),
        ({"analysis": {"noise": {}}}, "linear time grid"),
        ({"analysis": {"eta": {}}}, "window"),
        ({"analysis": {"qea": {"smooth": 3}}}, r"analysis\.qea"),
        ({"thresholds": {"schemes": []}}, "must not be empty"),
        ({"thresholds": {"pool_recursion": "loop"}}, "pool_recursion"),
        ({"thresholds": {"pool_sizes": [10_000, 20_000]}}, "3 distinct sizes"),
    ],
)
def test_parse_invalid(change, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(small_doc(**change))


def test_parse_missing_seed():
    doc = small_doc()
    del doc["seed"]
    with pytest.raises(ConfigError, match="'seed'"):
        parse_config(doc)


def test_load_config_bad_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("schema: [1\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(p)


def test_presets():
    names = list_presets()
    assert names == ["fig2-desk", "fig3-desk", "fig4-desk", "si-noise", "si-pair", "si-tables"]
    for name in names:
        cfg = load_preset(name)
        assert cfg.name == name

    fig3 = load_preset("fig3-desk")
    assert sorted(lc.build().n for lc in fig3.lattices) == [12, 16, 20]
    assert fig3.w == (25.0,)
    assert load_preset("si-tables").thresholds.K == (3, 4, 5, 6)


def test_threshold_pool_options():
    from xyglass.campaign import _pool_options

    th = parse_config(small_doc(thresholds={"schemes": ["pool"], "pool_recursion": "upper_limit"})).thresholds
    assert _pool_options(th) == {"size": 100_000, "sweeps": 60, "recursion": "upper_limit"}

    th = parse_config(small_doc(thresholds={"schemes": ["pool"], "pool_sizes": [10_000, 30_000, 100_000]})).thresholds
    assert th.pool_sizes == (10_000, 30_000, 100_000)
    assert _pool_options(th)["sizes"] == (10_000, 30_000, 100_000)


def test_preset_unknown():
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("fig9")


@pytest.mark.parametrize("name", ["fig2-desk", "fig3-desk", "si-noise", "si-pair", "si-tables"])
def test_dump_config_roundtrip(name):
    cfg = load_preset(name)
    assert parse_config(yaml.safe_load(dump_config(cfg))) == cfg


def test_hash_ignores_output():
    a = parse_config(small_doc())
    b = parse_config(small_doc(output="elsewhere"))
    c = parse_config(small_doc(seed=8))
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_reference_thresholds():
    ref = load_reference_thresholds()
    assert len(ref) == 16
    row = ref.query("scheme == 'self_energy' and channel == 'relaxation' and K == 4")
    assert row["j_critical"].item() == pytest.approx(0.0195)


def test_run_thresholds():
    df = run_thresholds([3, 4], ["upper_limit"], ["relaxation"])
    assert list(df.columns) == ["scheme", "channel", "K", "j_critical", "tolerance", "reference"]
    assert df["reference"].tolist() == [0.0186, 0.0124]
    np.testing.assert_allclose(df["j_critical"], df["reference"], rtol=0.015)

    tables = threshold_tables(df)
    assert list(tables) == ["upper_limit"]
    assert list(tables["upper_limit"].columns) == ["channel", "K=3", "K=4"]


def test_run_thresholds_dephasing_matches_reference():
    df = run_thresholds([3, 4, 5, 6], ["upper_limit"], ["dephasing"])
    assert df["reference"].tolist() == [0.014, 0.010, 0.008, 0.006]
    np.testing.assert_allclose(df["j_critical"], df["reference"], rtol=0.08)


@pytest.mark.parametrize(
    "args, match",
    [
        (([3], []), "at least one scheme"),
        (([], ["upper_limit"]), "at least one branching"),
        (([3], ["guess"]), "invalid scheme"),
    ],
)
def test_run_thresholds_invalid(args, match):
    with pytest.raises(ValueError, match=match):
        run_thresholds(*args)


def _raw_files(out):
    return sorted(p.relative_to(out) for p in (out / "raw").rglob("*.csv"))


def test_run_campaign(tmp_path):
    cfg = parse_config(small_doc())
    out = tmp_path / "run"
    m = run_campaign(cfg, outdir=out)

    assert m.status == "complete"
    assert list(m.tasks) == ["L0/w0/r0", "L0/w0/r1"]
    assert len(_raw_files(out)) == 2

    raw = pd.read_csv(out / m.tasks["L0/w0/r0"]["file"])
    assert list(raw.columns[:5]) == ["seed", "word", "t", "R_exact", "R_shots"]
    assert [c for c in raw.columns if c.startswith("sz_")] == [f"sz_{i}" for i in range(6)]
    assert raw["word"].nunique() == 2
    assert raw["R_shots"].isna().all()
    # magnetization sums to 2 n_up - n = 0
    np.testing.assert_allclose(raw.filter(like="sz_").sum(axis=1), 0, atol=1e-9)

    qea = pd.read_csv(out / "summary" / "qea.csv")
    assert 0 <= qea["qea"].item() <= 1
    assert (out / "summary" / "eta.csv").is_file()
    assert (out / "summary" / "qea.schema.json").is_file()

    mj = json.loads((out / "manifest.json").read_text())
    assert mj["status"] == "complete"
    assert mj["config_hash"] == cfg.hash()
    assert load_config(out / "config.yaml") == cfg


def test_run_campaign_bit_reproducible(tmp_path):
    cfg = parse_config(small_doc())
    run_campaign(cfg, outdir=tmp_path / "a")
    run_campaign(cfg, outdir=tmp_path / "b")
    files = _raw_files(tmp_path / "a")
    assert files == _raw_files(tmp_path / "b")
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_run_campaign_resume(tmp_path, monkeypatch):
    cfg = parse_config(small_doc())
    out = tmp_path / "run"
    m = run_campaign(cfg, outdir=out)
    f1 = out / m.tasks["L0/w0/r1"]["file"]
    before = f1.read_bytes()
    f1.unlink()

    ran = []
    orig = campaign.run_task

    def spy(cfg, task, outdir):
        ran.append(task.key)
        return orig(cfg, task, outdir)

    monkeypatch.setattr(campaign, "run_task", spy)
    run_campaign(cfg, outdir=out)
    assert ran == ["L0/w0/r1"]
    assert f1.read_bytes() == before


def test_run_campaign_interrupted(tmp_path, monkeypatch):
    cfg = parse_config(small_doc(realizations=4))
    orig = campaign.run_task

    def interrupt_last(cfg, task, outdir):
        if task.realization == 3:
            raise KeyboardInterrupt
        return orig(cfg, task, outdir)

    monkeypatch.setattr(campaign, "run_task", interrupt_last)
    with pytest.raises(KeyboardInterrupt):
        run_campaign(cfg, outdir=tmp_path)

    mj = json.loads((tmp_path / "manifest.json").read_text())
    assert mj["status"] == "running"
    assert sorted(mj["tasks"]) == ["L0/w0/r0", "L0/w0/r1", "L0/w0/r2"]
    assert not list(tmp_path.glob("*.tmp"))

    ran = []

    def spy(cfg, task, outdir):
        ran.append(task.key)
        return orig(cfg, task, outdir)

    monkeypatch.setattr(campaign, "run_task", spy)
    m = run_campaign(cfg, outdir=tmp_path)
    assert ran == ["L0/w0/r3"]
    assert m.status == "complete"


def test_run_campaign_records_failures(tmp_path, monkeypatch):
    cfg = parse_config(small_doc())
    orig = campaign.run_task

    def flaky(cfg, task, outdir):
        if task.realization == 1:
            raise RuntimeError("step fell below min_step")
        return orig(cfg, task, outdir)

    monkeypatch.setattr(campaign, "run_task", flaky)
    m = run_campaign(cfg, outdir=tmp_path)
    assert m.status == "partial"
    assert m.tasks["L0/w0/r1"]["status"] == "failed"
    assert "min_step" in m.tasks["L0/w0/r1"]["error"]
    assert m.tasks["L0/w0/r0"]["status"] == "done"

    m2 = RunManifest.read(tmp_path / "manifest.json")
    assert m2.tasks == m.tasks


def test_frozen_campaign(tmp_path):
    cfg = parse_config(small_doc(J=0.0, realizations=1, shots=200))
    run_campaign(cfg, outdir=tmp_path)

    raw = pd.read_csv(next((tmp_path / "raw").rglob("*.csv")))
    np.testing.assert_allclose(raw["R_exact"], 1, atol=1e-12)
    np.testing.assert_array_equal(raw["R_shots"], 1)

    assert pd.read_csv(tmp_path / "summary" / "qea.csv")["qea"].item() == pytest.approx(1, abs=1e-6)
    rtyp = pd.read_csv(tmp_path / "summary" / "rtyp.csv")
    np.testing.assert_allclose(rtyp["R_typ"], 1, atol=1e-12)
    assert pd.read_csv(tmp_path / "summary" / "eta.csv")["eta"].item() == pytest.approx(0, abs=1e-9)


def test_neel_pair_campaign(tmp_path):
    doc = small_doc(
        w=[10.0, 20.0],
        realizations=2,
        initial={"kind": "neel"},
        times={"kind": "log", "start": 0.01, "stop": 1, "num": 9},
        analysis={"pair": {}},
    )
    run_campaign(parse_config(doc), outdir=tmp_path)
    pair = pd.read_csv(tmp_path / "summary" / "pair.csv")
    assert sorted(pair["w"].unique()) == [10.0, 20.0]
    assert len(pair) == 18
    # short times: both typical curves start at 1
    first = pair[pair["t"] == pair["t"].min()]
    np.testing.assert_allclose(first["R_pair_typ"], first["R_exact_typ"], rtol=1e-3)


def test_noise_and_diffusion_campaign(tmp_path):
    doc = small_doc(
        realizations=2,
        times={"kind": "linear", "start": 0, "stop": 60, "num": 241},
        analysis={"noise": {"bins_per_decade": 5}, "diffusion": {"cutoff": 10.0}},
    )
    m = run_campaign(parse_config(doc), outdir=tmp_path)
    assert m.analysis["noise"]["status"] == "done"
    assert (tmp_path / "summary" / "noise.csv").is_file()
    assert (tmp_path / "summary" / "noise_slope.csv").is_file()
    modes = pd.read_csv(tmp_path / "summary" / "diffusion_modes.csv")
    assert set(modes["k"]) <= set(range(1, 6))


def test_thresholds_campaign(tmp_path):
    doc = {
        "schema": 1,
        "name": "tables",
        "seed": 0,
        "thresholds": {"K": [3, 5], "schemes": ["upper_limit", "self_energy"], "channels": ["relaxation"]},
    }
    m = run_campaign(parse_config(doc), outdir=tmp_path)
    assert m.status == "complete"
    assert m.tasks == {}
    long = pd.read_csv(tmp_path / "summary" / "thresholds.csv")
    assert len(long) == 4
    wide = pd.read_csv(tmp_path / "summary" / "thresholds-self_energy.csv")
    assert list(wide.columns) == ["channel", "K=3", "K=5"]
