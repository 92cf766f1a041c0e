"""
Campaigns: config-driven sweeps over lattices, disorder widths, realizations and initial states.

For example:

- load a YAML config (or a built-in preset) into a :class:`CampaignConfig`
- run every ``(lattice, w, realization)`` task, writing raw trajectories
- recompute summary tables (``Q_EA``, ``eta``, diffusion, noise, pair overlay) from the raw files
- tabulate the Cayley-tree thresholds next to the reference values

Outputs are a pure function of the config (including its master seed).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from pint import UnitRegistry

from .util import derive_seed, get_version, write_table

LOGGER = logging.getLogger(__name__)

ureg = UnitRegistry()

SCHEMA_VERSION = 1

ANALYSES = ("qea", "eta", "diffusion", "noise", "pair")


class ConfigError(ValueError):
    """Invalid campaign config."""


def _get_data():
    from importlib.resources import files

    from . import data

    return files(data)


DATA = _get_data()


@lru_cache(1)
def load_reference_thresholds() -> pd.DataFrame:
    """Published Cayley-tree thresholds.

    Columns: ``scheme``, ``channel``, ``K``, ``j_critical``.
    """
    with DATA.joinpath("si-thresholds.csv").open() as f:
        df = pd.read_csv(f, comment="#")
    return df


def list_presets() -> list[str]:
    """Names of the built-in campaign presets."""
    return sorted(
        p.name[: -len(".yaml")] for p in DATA.joinpath("presets").iterdir() if p.name.endswith(".yaml")
    )


def _check_keys(d: dict, allowed: Iterable[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(d).__name__}")
    allowed = list(allowed)
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra} in {where}; allowed: {sorted(allowed)}")


def to_jt(value, coupling: str | None) -> float:
    """Dimensionless ``Jt`` from a number or a time quantity string such as ``'30 ns'``.

    Quantities need `coupling` (``J/2 pi``, e.g. ``'5.3 MHz'``): ``Jt = 2 pi (J/2 pi) t``.

    >>> round(to_jt("30 ns", "5.3 MHz"), 4)
    0.999
    """
    if isinstance(value, (int, float)):
        return float(value)
    q = ureg.Quantity(str(value))
    if q.dimensionless:
        return float(q.magnitude)
    if coupling is None:
        raise ConfigError(f"time {value!r} has units but no `coupling` (J/2pi) was given")
    try:
        jt = (2 * math.pi * ureg.Quantity(coupling) * q).to("dimensionless")
    except Exception as e:
        raise ConfigError(f"cannot convert {value!r} with coupling {coupling!r}: {e}") from None
    return float(jt.magnitude)


@dataclass(frozen=True)
class LatticeConfig:
    rows: int
    cols: int
    mask: tuple[tuple[int, int], ...] = ()

    def build(self):
        from .lattice import build_lattice

        return build_lattice(self.rows, self.cols, mask=self.mask)


@dataclass(frozen=True)
class TimeGrid:
    kind: str = "log"
    """``'log'``, ``'linear'`` or ``'list'``."""
    start: float = 0.1
    stop: float = 100.0
    num: int = 61
    values_: tuple[float, ...] = ()

    def values(self) -> np.ndarray:
        if self.kind == "log":
            return np.logspace(math.log10(self.start), math.log10(self.stop), self.num)
        elif self.kind == "linear":
            return np.linspace(self.start, self.stop, self.num)
        else:
            return np.asarray(self.values_, dtype=np.float64)


@dataclass(frozen=True)
class InitialStates:
    kind: str = "midband"
    """``'midband'`` (random words near the middle of the spectrum) or ``'neel'``."""
    count: int = 1
    threshold: float = 0.05


@dataclass(frozen=True)
class ThresholdConfig:
    K: tuple[int, ...] = (3, 4, 5, 6)
    schemes: tuple[str, ...] = ("upper_limit", "self_energy")
    channels: tuple[str, ...] = ("relaxation", "dephasing")
    pool_size: int = 100_000
    pool_sweeps: int = 60
    pool_recursion: str = "tree"
    """Dephasing pool update, ``'tree'`` or ``'upper_limit'``."""
    pool_sizes: tuple[int, ...] = ()
    """Pool sizes to extrapolate over; empty runs one pool of ``pool_size``."""


@dataclass(frozen=True)
class CampaignConfig:
    name: str
    seed: int
    lattices: tuple[LatticeConfig, ...] = ()
    w: tuple[float, ...] = ()
    J: float = 1.0
    n_up: int | None = None
    realizations: int = 1
    initial: InitialStates = field(default_factory=InitialStates)
    shots: int = 0
    """Shots per time point for the sampled R estimate (0: exact only)."""
    times: TimeGrid = field(default_factory=TimeGrid)
    coupling: str | None = None
    accuracy: float = 1e-9
    max_krylov: int = 40
    analysis: dict[str, dict[str, Any]] = field(default_factory=dict)
    thresholds: ThresholdConfig | None = None
    output: str = "runs"

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form, excluding `output`."""
        d = asdict(self)
        d.pop("output")
        s = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(s.encode()).hexdigest()

    def tasks(self) -> list[Task]:
        return [
            Task(li, wi, r)
            for li in range(len(self.lattices))
            for wi in range(len(self.w))
            for r in range(self.realizations)
        ]

    def evolution(self):
        from .evolve import EvolutionConfig

        return EvolutionConfig(accuracy=self.accuracy, max_krylov=self.max_krylov)


_ANALYSIS_KEYS = {
    "qea": ("window", "degree"),
    "eta": ("window",),
    "diffusion": ("cutoff",),
    "noise": ("band", "kind", "bins_per_decade", "window"),
    "pair": (),
}


def parse_config(doc: dict[str, Any]) -> CampaignConfig:
    """Validate a config document (e.g. parsed YAML) into a :class:`CampaignConfig`."""
    from math import comb

    from .hilbert import MAX_DIM, MAX_N

    top = [
        "schema", "name", "seed", "lattices", "w", "J", "n_up", "realizations", "initial",
        "shots", "times", "coupling", "evolution", "analysis", "thresholds", "output",
    ]  # fmt: skip
    _check_keys(doc, top, "config")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"`schema` must be {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    for k in ["name", "seed"]:
        if k not in doc:
            raise ConfigError(f"missing required key {k!r}")

    lattices = []
    for i, ld in enumerate(doc.get("lattices", [])):
        _check_keys(ld, ["rows", "cols", "mask"], f"lattices[{i}]")
        lc = LatticeConfig(
            int(ld["rows"]), int(ld["cols"]), tuple(tuple(int(v) for v in s) for s in ld.get("mask", []))
        )
        try:
            lat = lc.build()
        except ValueError as e:
            raise ConfigError(f"lattices[{i}]: {e}") from None
        n_up = doc.get("n_up")
        k = lat.n // 2 if n_up is None else int(n_up)
        if lat.n > MAX_N or comb(lat.n, k) > MAX_DIM:
            raise ConfigError(f"lattices[{i}] ({lat.name}) sector is too large to enumerate")
        lattices.append(lc)

    w = tuple(float(x) for x in doc.get("w", []))
    if any(x < 0 for x in w):
        raise ConfigError(f"disorder widths must be nonnegative, got {list(w)}")
    if lattices and not w:
        raise ConfigError("`w` must list at least one disorder width")

    ini = doc.get("initial", {})
    _check_keys(ini, ["kind", "count", "threshold"], "initial")
    initial = InitialStates(**ini)
    if initial.kind not in ("midband", "neel"):
        raise ConfigError(f"initial.kind must be 'midband' or 'neel', got {initial.kind!r}")
    if initial.kind == "neel" and initial.count != 1:
        raise ConfigError("initial.count must be 1 for the Néel state")

    coupling = doc.get("coupling")
    td = doc.get("times", {})
    _check_keys(td, ["kind", "start", "stop", "num", "values"], "times")
    if td.get("kind", "log") == "list" or "values" in td:
        times = TimeGrid(kind="list", values_=tuple(to_jt(v, coupling) for v in td.get("values", [])))
    else:
        times = TimeGrid(
            kind=td.get("kind", "log"),
            start=to_jt(td.get("start", 0.1), coupling),
            stop=to_jt(td.get("stop", 100.0), coupling),
            num=int(td.get("num", 61)),
        )
    if times.kind not in ("log", "linear", "list"):
        raise ConfigError(f"times.kind must be 'log', 'linear' or 'list', got {times.kind!r}")
    if times.kind == "log" and (times.start <= 0 or times.stop <= 0):
        raise ConfigError("log time grid needs a positive start and stop")
    tv = times.values()
    if lattices and (len(tv) < 2 or np.any(np.diff(tv) <= 0) or tv[0] < 0):
        raise ConfigError("time grid must hold at least 2 strictly increasing nonnegative times")

    ev = doc.get("evolution", {})
    _check_keys(ev, ["accuracy", "max_krylov"], "evolution")

    an = doc.get("analysis", {}) or {}
    _check_keys(an, ANALYSES, "analysis")
    analysis = {}
    for k, v in an.items():
        v = v or {}
        _check_keys(v, _ANALYSIS_KEYS[k], f"analysis.{k}")
        analysis[k] = dict(v)
    if "noise" in analysis and times.kind != "linear":
        raise ConfigError("noise analysis needs a linear time grid")
    if "eta" in analysis and "window" not in analysis["eta"]:
        raise ConfigError("analysis.eta needs a `window: [t_lo, t_hi]`")

    thresholds = None
    if doc.get("thresholds") is not None:
        th = doc["thresholds"]
        _check_keys(
            th,
            ["K", "schemes", "channels", "pool_size", "pool_sweeps", "pool_recursion", "pool_sizes"],
            "thresholds",
        )
        thresholds = ThresholdConfig(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in th.items()}
        )
        if not thresholds.schemes:
            raise ConfigError("thresholds.schemes must not be empty")
        if thresholds.pool_recursion not in ("tree", "upper_limit"):
            raise ConfigError(
                f"thresholds.pool_recursion must be 'tree' or 'upper_limit', got {thresholds.pool_recursion!r}"
            )
        if thresholds.pool_sizes and len(set(thresholds.pool_sizes)) < 3:
            raise ConfigError("thresholds.pool_sizes needs at least 3 distinct sizes")

    counts = {
        "realizations": int(doc.get("realizations", 1)),
        "initial.count": initial.count,
    }
    for k, v in counts.items():
        if v < 1:
            raise ConfigError(f"`{k}` must be positive, got {v}")
    if int(doc.get("shots", 0)) < 0:
        raise ConfigError("`shots` must be nonnegative")

    try:
        return CampaignConfig(
            name=str(doc["name"]),
            seed=int(doc["seed"]),
            lattices=tuple(lattices),
            w=w,
            J=float(doc.get("J", 1.0)),
            n_up=doc.get("n_up"),
            realizations=counts["realizations"],
            initial=initial,
            shots=int(doc.get("shots", 0)),
            times=times,
            coupling=coupling,
            accuracy=float(ev.get("accuracy", 1e-9)),
            max_krylov=int(ev.get("max_krylov", 40)),
            analysis=analysis,
            thresholds=thresholds,
            output=str(doc.get("output", f"runs/{doc['name']}")),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path: Path | str) -> CampaignConfig:
    """Read and validate a YAML config file."""
    import yaml

    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from None
    if doc is None:
        raise ConfigError(f"{path} is empty")

    return parse_config(doc)


def load_preset(name: str) -> CampaignConfig:
    """Built-in config by name (see :func:`list_presets`)."""
    import yaml

    if name not in list_presets():
        raise ConfigError(f"unknown preset {name!r}; choose from {list_presets()}")

    return parse_config(yaml.safe_load(DATA.joinpath("presets", f"{name}.yaml").read_text()))


def dump_config(cfg: CampaignConfig) -> str:
    """YAML form of `cfg` that :func:`parse_config` reads back to an equal config."""
    import yaml

    doc: dict[str, Any] = {"schema": SCHEMA_VERSION, "name": cfg.name, "seed": cfg.seed}
    if cfg.lattices:
        doc["lattices"] = [
            {"rows": lc.rows, "cols": lc.cols, "mask": [list(s) for s in lc.mask]}
            for lc in cfg.lattices
        ]
        doc["w"] = list(cfg.w)
        doc["J"] = cfg.J
        doc["n_up"] = cfg.n_up
        doc["realizations"] = cfg.realizations
        doc["initial"] = asdict(cfg.initial)
        doc["shots"] = cfg.shots
        doc["coupling"] = cfg.coupling
        if cfg.times.kind == "list":
            doc["times"] = {"kind": "list", "values": list(cfg.times.values_)}
        else:
            doc["times"] = {
                "kind": cfg.times.kind,
                "start": cfg.times.start,
                "stop": cfg.times.stop,
                "num": cfg.times.num,
            }
        doc["evolution"] = {"accuracy": cfg.accuracy, "max_krylov": cfg.max_krylov}
        doc["analysis"] = cfg.analysis
    if cfg.thresholds is not None:
        doc["thresholds"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg.thresholds).items()}
    doc["output"] = cfg.output

    return yaml.safe_dump(doc, sort_keys=False)


class Task(NamedTuple):
    lattice: int
    """Index into ``CampaignConfig.lattices``."""
    w: int
    """Index into ``CampaignConfig.w``."""
    realization: int

    @property
    def key(self) -> str:
        return f"L{self.lattice}/w{self.w}/r{self.realization}"


def task_seed(cfg: CampaignConfig, task: Task) -> int:
    """Disorder key of a task."""
    return derive_seed(cfg.seed, task.lattice, task.w, task.realization)


def _raw_path(cfg: CampaignConfig, task: Task) -> Path:
    lc = cfg.lattices[task.lattice]
    return Path("raw") / f"{lc.rows}x{lc.cols}-{task.lattice}" / f"w{cfg.w[task.w]:g}" / f"r{task.realization:04d}.csv"


def initial_words(cfg: CampaignConfig, lattice, disorder, seed: int) -> list[int]:
    from .evolve import midband_words
    from .lattice import neel_word

    if cfg.initial.kind == "neel":
        return [neel_word(lattice)]
    n_up = lattice.n // 2 if cfg.n_up is None else cfg.n_up
    return midband_words(
        disorder, n_up, cfg.initial.count, derive_seed(seed, 1), threshold=cfg.initial.threshold
    )


def run_task(cfg: CampaignConfig, task: Task, outdir: Path | str) -> Path:
    """Evolve every initial word of one realization and write its raw trajectory table.

    Columns: ``seed``, ``word``, ``t``, ``R_exact``, ``R_shots``, ``sz_<i>`` per site.
    """
    from .evolve import (
        StateVector,
        evolve_series,
        local_magnetization,
        return_probability,
        sample_bitstrings,
        shot_return_probability,
    )
    from .hilbert import build_hamiltonian, enumerate_basis
    from .lattice import sample_disorder

    lattice = cfg.lattices[task.lattice].build()
    w = cfg.w[task.w]
    seed = task_seed(cfg, task)
    disorder = sample_disorder(lattice, w, seed)
    words = initial_words(cfg, lattice, disorder, seed)
    if not words:
        raise RuntimeError(f"no initial words found for realization {task.key}")
    n_up = bin(words[0]).count("1")
    basis = enumerate_basis(lattice.n, n_up)
    H = build_hamiltonian(lattice, disorder, basis, J=cfg.J)
    times = cfg.times.values()
    ecfg = cfg.evolution()

    frames = []
    for s, word in enumerate(words):
        psi0 = StateVector.from_word(basis, word)
        R, Rs, mags = [], [], []

        tick = itertools.count()

        def observe(psi):
            R.append(return_probability(psi0, psi))
            mags.append(local_magnetization(psi))
            if cfg.shots > 0:
                smp = sample_bitstrings(psi, cfg.shots, derive_seed(seed, 2, s, next(tick)))
                Rs.append(shot_return_probability(smp, word))
            else:
                Rs.append(math.nan)

        evolve_series(H, psi0, times, ecfg, observe=observe)

        df = pd.DataFrame({"seed": seed, "word": word, "t": times, "R_exact": R, "R_shots": Rs})
        sz = pd.DataFrame(np.asarray(mags), columns=[f"sz_{i}" for i in range(lattice.n)])
        frames.append(pd.concat([df, sz], axis=1))

    out = pd.concat(frames, ignore_index=True)
    out.attrs["col_desc"] = {
        "seed": "Disorder realization key",
        "word": "Initial bitstring (bit i = site i up)",
        "t": "Time [1/J]",
        "R_exact": "Return probability",
        "R_shots": "Shot-sampled return probability (NaN without shots)",
        **{f"sz_{i}": f"<sigma^z> of site {i}" for i in range(lattice.n)},
    }
    rel = _raw_path(cfg, task)
    write_table(out, Path(outdir) / rel)
    LOGGER.debug("task %s wrote %s", task.key, rel)

    return rel


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    tasks: dict[str, dict[str, Any]] = field(default_factory=dict)
    """Per task key: ``seed``, ``status`` (``'done'``/``'failed'``), ``file``, ``error``."""
    analysis: dict[str, dict[str, Any]] = field(default_factory=dict)
    started: float = 0.0
    finished: float = 0.0

    @property
    def status(self) -> str:
        """``'running'`` until the campaign finishes, then ``'complete'`` when every task
        and analysis succeeded, else ``'partial'``."""
        if not self.finished:
            return "running"
        ok = all(t["status"] == "done" for t in self.tasks.values()) and all(
            a["status"] == "done" for a in self.analysis.values()
        )
        return "complete" if ok else "partial"

    def write(self, path: Path | str) -> Path:
        p = Path(path)
        d = asdict(self)
        d["status"] = self.status
        d["tasks"] = dict(sorted(self.tasks.items()))
        # replace in one step so an interrupted run never leaves a truncated manifest
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(json.dumps(d, indent=2) + "\n")
        tmp.replace(p)
        return p

    @classmethod
    def read(cls, path: Path | str) -> RunManifest:
        d = json.loads(Path(path).read_text())
        d.pop("status", None)
        return cls(**d)


def _run_one(args) -> tuple[str, dict[str, Any]]:
    cfg, task, outdir = args
    rec: dict[str, Any] = {"seed": task_seed(cfg, task), "file": None, "error": None}
    try:
        rec["file"] = run_task(cfg, task, outdir).as_posix()
    except Exception as e:
        rec["status"] = "failed"
        rec["error"] = f"{type(e).__name__}: {e}"
    else:
        rec["status"] = "done"
    return task.key, rec


def run_campaign(
    cfg: CampaignConfig, *, outdir: Path | str | None = None, workers: int = 1
) -> RunManifest:
    """Run all tasks (skipping those a matching manifest marks done), then the analysis chain.

    Task failures are recorded in the manifest and the campaign continues.
    Results are merged by task key, never by completion order.
    """
    out = Path(outdir if outdir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"

    manifest = RunManifest(config_hash=cfg.hash(), seed=cfg.seed, version=get_version(git=False))
    if mpath.is_file():
        old = RunManifest.read(mpath)
        if old.config_hash == cfg.hash():
            manifest.tasks = {
                k: v
                for k, v in old.tasks.items()
                if v["status"] == "done" and v["file"] and (out / v["file"]).is_file()
            }
            LOGGER.info("resuming: %d tasks already done", len(manifest.tasks))
        else:
            LOGGER.warning("config changed since the last run in %s; starting over", out)
    manifest.started = time.time()

    (out / "config.yaml").write_text(dump_config(cfg))

    todo = [t for t in cfg.tasks() if t.key not in manifest.tasks]
    LOGGER.info("%s: %d of %d tasks to run", cfg.name, len(todo), len(cfg.tasks()))
    manifest.write(mpath)

    def record(key, rec):
        manifest.tasks[key] = rec
        if rec["status"] == "failed":
            LOGGER.error("task %s failed: %s", key, rec["error"])
        manifest.write(mpath)

    jobs = [(cfg, t, out) for t in todo]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor, as_completed

        with ProcessPoolExecutor(max_workers=workers) as ex:
            for fut in as_completed([ex.submit(_run_one, j) for j in jobs]):
                record(*fut.result())
    else:
        for j in jobs:
            record(*_run_one(j))

    if cfg.lattices:
        manifest.analysis = analyze(cfg, out)
    if cfg.thresholds is not None:
        manifest.analysis.update(_run_threshold_step(cfg.thresholds, out))

    manifest.finished = time.time()
    manifest.write(mpath)
    LOGGER.info("%s: %s in %.1f s", cfg.name, manifest.status, manifest.finished - manifest.started)

    return manifest


class Trajectory(NamedTuple):
    seed: int
    word: int
    times: np.ndarray
    R: np.ndarray
    R_shots: np.ndarray
    sz: np.ndarray
    """``(len(times), n)`` site magnetizations."""


def load_trajectories(cfg: CampaignConfig, outdir: Path | str, lattice: int, w: int) -> list[Trajectory]:
    """Raw trajectories of one ``(lattice, w)`` cell, in realization then word order."""
    out = Path(outdir)
    trajs = []
    for r in range(cfg.realizations):
        p = out / _raw_path(cfg, Task(lattice, w, r))
        if not p.is_file():
            continue
        df = pd.read_csv(p)
        sz_cols = [c for c in df.columns if c.startswith("sz_")]
        for word, g in df.groupby("word", sort=False):
            trajs.append(
                Trajectory(
                    seed=int(g["seed"].iloc[0]),
                    word=int(word),
                    times=g["t"].to_numpy(),
                    R=g["R_exact"].to_numpy(),
                    R_shots=g["R_shots"].to_numpy(),
                    sz=g[sz_cols].to_numpy(),
                )
            )
    return trajs


def _with_desc(df: pd.DataFrame, desc: dict[str, str]) -> pd.DataFrame:
    df.attrs["col_desc"] = desc
    return df


def analyze(cfg: CampaignConfig, outdir: Path | str) -> dict[str, dict[str, Any]]:
    """Recompute every configured summary table from the raw files in `outdir`.

    Returns per-analysis status records for the manifest.
    """
    from .analysis import (
        TimeSeries,
        diffusion_summary,
        extract_qea,
        fit_eta,
        fit_eta_scaling,
        lnR_typical,
        mode_projection,
        squared_autocorrelation,
    )
    from .evolve import noise_spectrum, spectral_slope, word_spins
    from .lattice import laplacian_eigenmodes, sample_disorder
    from .pairapprox import pair_return_probability

    out = Path(outdir)
    summ = out / "summary"
    status: dict[str, dict[str, Any]] = {}
    rows: dict[str, list] = {k: [] for k in ["qea", "fits", "rtyp", "lnr", "eta", "modes", "diff", "noise", "slope", "pair"]}

    def attempt(name: str, fn, *args):
        try:
            fn(*args)
        except (ValueError, RuntimeError) as e:
            LOGGER.error("analysis %s failed: %s", name, e)
            status[name] = {"status": "failed", "error": f"{type(e).__name__}: {e}"}
        else:
            status.setdefault(name, {"status": "done", "error": None})

    for li, lc in enumerate(cfg.lattices):
        lattice = lc.build()
        for wi, w in enumerate(cfg.w):
            trajs = load_trajectories(cfg, out, li, wi)
            if not trajs:
                status[f"L{li}/w{wi}"] = {"status": "failed", "error": "no raw trajectories"}
                continue
            t = trajs[0].times
            keys = {"lattice": lattice.name, "n": lattice.n, "w": w}
            autocorr = [TimeSeries(t, tr.sz * word_spins(tr.word, lattice.n)) for tr in trajs]

            def do_qea():
                opts = cfg.analysis["qea"]
                C = squared_autocorrelation(autocorr)
                res = extract_qea(C, w, window=opts.get("window", 11), degree=opts.get("degree", 2))
                rows["qea"].append(
                    {**keys, "qea": res.qea, "model": res.model, "count": C.meta["count"],
                     **{f"chi_{m}": c for m, c in res.chi.items()}}
                )  # fmt: skip
                rows["fits"].extend(f.to_row(**keys) for f in res.fits.values())

            def do_eta():
                lnR = np.log(np.clip(np.asarray([tr.R for tr in trajs]), 1e-300, None))
                mean = lnR.mean(axis=0)
                var = lnR.var(axis=0, ddof=1) / len(lnR) if len(lnR) > 1 else None
                for ti, tt in enumerate(t):
                    rows["rtyp"].append({**keys, "t": tt, "lnR_mean": mean[ti], "R_typ": math.exp(mean[ti])})
                if len(lnR) >= 30:
                    st = lnR_typical(np.exp(lnR[:, -1]))
                    rows["lnr"].append({**keys, "t": t[-1], **st._asdict()})
                Rt = TimeSeries(t, np.exp(mean), variance=var)
                ef = fit_eta(Rt, tuple(cfg.analysis["eta"]["window"]))
                rows["eta"].append({**keys, "eta": ef.eta, "eta_err": ef.error, "t_lo": ef.window[0], "t_hi": ef.window[1], "chi": ef.chi})

            def do_diffusion():
                modes = laplacian_eigenmodes(lattice)
                mp = mode_projection([TimeSeries(t, tr.sz) for tr in trajs], modes)
                ds = diffusion_summary(mp.correlation, modes, cutoff=cfg.analysis["diffusion"].get("cutoff", 0.5))
                rows["modes"].extend({**keys, **r} for r in ds.modes.to_dict("records"))
                if ds.fit is not None:
                    rows["diff"].append({**keys, **ds.fit._asdict()})

            def do_noise():
                opts = cfg.analysis["noise"]
                spec = noise_spectrum(
                    autocorr,
                    window=opts.get("window", "hann"),
                    kind=opts.get("kind", "correlation"),
                    bins_per_decade=opts.get("bins_per_decade", 10),
                )
                rows["noise"].extend({**keys, "freq": f, "power": p} for f, p in zip(spec.freq, spec.power))
                band = opts.get("band") or (10 * spec.freq_raw[0], spec.freq_raw[-1] / 2)
                slope, err = spectral_slope(spec, tuple(band))
                rows["slope"].append({**keys, "slope": slope, "slope_err": err, "f_lo": band[0], "f_hi": band[1]})

            def do_pair():
                lp = []
                for tr in trajs:
                    dis = sample_disorder(lattice, w, tr.seed)
                    lp.append(np.log(pair_return_probability(lattice, dis, t, word=tr.word, J=cfg.J)))
                lp = np.asarray(lp)
                le = np.log(np.clip(np.asarray([tr.R for tr in trajs]), 1e-300, None))
                for ti, tt in enumerate(t):
                    rows["pair"].append(
                        {**keys, "t": tt, "R_pair_typ": math.exp(lp[:, ti].mean()),
                         "R_exact_typ": math.exp(le[:, ti].mean())}
                    )  # fmt: skip

            steps = {"qea": do_qea, "eta": do_eta, "diffusion": do_diffusion, "noise": do_noise, "pair": do_pair}
            for name in cfg.analysis:
                attempt(name, steps[name])

    if "eta" in cfg.analysis and rows["eta"]:
        eta_df = pd.DataFrame(rows["eta"])
        scaling = []
        for w, g in eta_df.groupby("w"):
            if g["n"].nunique() >= 3 and (g["eta"] > 0).all():
                sf = fit_eta_scaling(zip(g["n"], g["eta"]))
                scaling.append({"w": w, **sf._asdict()})
        if scaling:
            write_table(
                _with_desc(pd.DataFrame(scaling), {"p": "Exponent of eta ~ kappa n^p", "kappa": "Prefactor"}),
                summ / "eta_scaling.csv",
            )

    descs = {
        "qea": ("qea.csv", {"qea": "Edwards-Anderson order parameter", "model": "Winning decay model", "count": "Trajectories averaged"}),
        "fits": ("fits.csv", {"chi": "Mean squared relative deviation of the fit"}),
        "rtyp": ("rtyp.csv", {"lnR_mean": "Average of ln R over realizations and words", "R_typ": "exp(lnR_mean)"}),
        "lnr": ("lnR_stats.csv", {"center": "Gaussian-fit center of the ln R histogram"}),
        "eta": ("eta.csv", {"eta": "Slope of -ln R_typ against ln(Jt)"}),
        "modes": ("diffusion_modes.csv", {"gamma": "Relaxation rate of the mode correlation [J]"}),
        "diff": ("diffusion.csv", {"D": "Prefactor of Gamma = D lambda^beta", "beta": "Diffusion exponent"}),
        "noise": ("noise.csv", {"freq": "Frequency [J/2pi]", "power": "Binned spectrum"}),
        "slope": ("noise_slope.csv", {"slope": "Log-log slope of the spectrum"}),
        "pair": ("pair.csv", {"R_pair_typ": "Typical R, independent-pair approximation", "R_exact_typ": "Typical R, exact"}),
    }  # fmt: skip
    for k, recs in rows.items():
        if recs:
            fn, desc = descs[k]
            write_table(_with_desc(pd.DataFrame(recs), desc), summ / fn)

    return status


def run_thresholds(
    K: Sequence[int] = (3, 4, 5, 6),
    schemes: Sequence[str] = ("upper_limit", "self_energy"),
    channels: Sequence[str] = ("relaxation", "dephasing"),
    **pool_kws,
) -> pd.DataFrame:
    """Cayley-tree thresholds for every ``(scheme, channel, K)``, with reference values.

    Returns a long table: ``scheme``, ``channel``, ``K``, ``j_critical``, ``tolerance``, ``reference``.
    See :func:`threshold_tables` for the wide layout.
    """
    from .cayley import CHANNELS, SCHEMES, threshold

    if not schemes:
        raise ValueError("need at least one scheme")
    if not K:
        raise ValueError("need at least one branching number")
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"invalid scheme {s!r}; choose from {SCHEMES}")
    for c in channels:
        if c not in CHANNELS:
            raise ValueError(f"invalid channel {c!r}; choose from {CHANNELS}")

    ref = load_reference_thresholds().set_index(["scheme", "channel", "K"])["j_critical"]
    rows = []
    for s in schemes:
        for c in channels:
            for k in K:
                LOGGER.info("threshold %s/%s K=%d", s, c, k)
                res = threshold(int(k), s, c, **(pool_kws if s == "pool" else {}))
                rows.append(
                    {
                        "scheme": s,
                        "channel": c,
                        "K": int(k),
                        "j_critical": res.j_critical,
                        "tolerance": res.tolerance,
                        "reference": ref.get((s, c, int(k)), np.nan),
                    }
                )

    df = pd.DataFrame(rows)
    df.attrs.update(
        col_desc={
            "scheme": "Approximation scheme",
            "channel": "Relaxation or dephasing",
            "K": "Branching number",
            "j_critical": "Critical coupling J/W",
            "tolerance": "Numerical tolerance on j_critical",
            "reference": "Published value",
        },
        fancy_col={"j_critical": "j꜀", "K": "K"},
    )

    return df


def threshold_tables(df: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Wide tables, one per scheme: rows channel, columns K."""
    tables = {}
    for s, g in df.groupby("scheme", sort=False):
        wide = g.pivot(index="channel", columns="K", values="j_critical")
        wide.columns = [f"K={k}" for k in wide.columns]
        tables[str(s)] = wide.reset_index()
    return tables


def _pool_options(th: ThresholdConfig) -> dict[str, Any]:
    kws: dict[str, Any] = {"size": th.pool_size, "sweeps": th.pool_sweeps, "recursion": th.pool_recursion}
    if th.pool_sizes:
        kws["sizes"] = th.pool_sizes
    return kws


def _run_threshold_step(th: ThresholdConfig, out: Path) -> dict[str, dict[str, Any]]:
    try:
        df = run_thresholds(th.K, th.schemes, th.channels, **_pool_options(th))
    except (ValueError, RuntimeError) as e:
        LOGGER.error("thresholds failed: %s", e)
        return {"thresholds": {"status": "failed", "error": f"{type(e).__name__}: {e}"}}

    write_table(df, out / "summary" / "thresholds.csv")
    for s, wide in threshold_tables(df).items():
        write_table(wide, out / "summary" / f"thresholds-{s}.csv")

    return {"thresholds": {"status": "done", "error": None}}
