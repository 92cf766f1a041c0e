"""
CLI
"""

from __future__ import annotations

import functools
import logging
import os
import re
from pathlib import Path

try:
    import typer
    from rich.console import Console, RenderableType
    from rich.style import Style
except ImportError as e:
    print("The xyglass CLI requires typer and rich (included with the 'cli' extra).")
    print(f"Error was: {e!r}")
    raise SystemExit(1)

_RICH_EXPORT: str = os.environ.get("XYGLASS_RICH_EXPORT", "0")

HERE = Path(__file__).parent
_TRAN_SUPE_DIGIT = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")

RC_CONFIG = 2
RC_NUMERICAL = 3
RC_PARTIAL = 4

console = Console(record=_RICH_EXPORT != "0")

app = typer.Typer(add_completion=False, name="xyglass")


def _to_fancy_sci(s: str) -> str:
    a, b0 = s.split("e")
    b = str(int(b0)).replace("-", "⁻").translate(_TRAN_SUPE_DIGIT)

    return f"{a}×10{b}"


def _maybe_export_output(cmd):
    """Export CLI command's Rich output to SVG,
    dependent on the value of the ``XYGLASS_RICH_EXPORT`` environment variable.

    - ``0`` or unset: Do not export.
    - ``1``: Export to ``xyglass-rich-export.svg``.
    - Any other value: Export to ``<value>.svg``
      (or just ``value`` if it already ends in ``.svg``).
    """

    @functools.wraps(cmd)
    def inner(*args, **kwargs):
        ret = cmd(*args, **kwargs)

        p: Path | None  # type: ignore[annotation-unchecked]
        if _RICH_EXPORT == "1":
            p = Path("xyglass-rich-export.svg")
        elif _RICH_EXPORT == "0":
            p = None
        else:
            p = Path(_RICH_EXPORT).with_suffix(".svg")

        if p is not None:
            console.save_svg(p)

        return ret

    return inner


def error(s: str, *, rc: int = 1, markup: bool = True) -> None:
    """Print error message."""
    console.print(s, style=Style(color="red", bold=True), highlight=False, markup=markup)
    assert rc != 0
    raise typer.Exit(rc)


def info(s: str) -> None:
    """Print info message."""
    console.print(s, style=Style(color="cyan", bold=True), highlight=False)


def warning(s: str) -> None:
    """Print warning message."""
    console.print(s, style=Style(color="red", bold=False), highlight=False)


def pretty_warnings(f):
    """Decorator to catch warnings and pretty-print them with Rich after running `f`."""
    import warnings

    @functools.wraps(f)
    def inner(*args, **kwargs):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            try:
                f(*args, **kwargs)
            finally:
                for i in range(len(w)):
                    warning(f"- {w[i].message}")

    return inner


def _version_callback(show: bool):
    if show:
        import subprocess

        from . import __version__

        v = f"[rgb(70,130,180)]xyglass[/] [bold blue]{__version__}[/]"
        try:
            cmd = ["git", "-C", HERE.as_posix(), "rev-parse", "--verify", "--short", "HEAD"]
            cp = subprocess.run(cmd, text=True, capture_output=True, check=True)
        except Exception:
            pass
        else:
            v += f" [rgb(100,100,100)]({cp.stdout.strip()})[/]"

        console.print(v, highlight=False)

        raise typer.Exit(0)


@app.callback()
def main(
    version: bool = typer.Option(
        False,
        "--version/",
        help="Print version and exit.",
        callback=_version_callback,
        is_eager=True,
    ),
    verbose: int = typer.Option(
        0, "-v", "--verbose", count=True, help="Log progress (-v: info, -vv: debug)."
    ),
):
    from rich.logging import RichHandler

    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _with_float_nonext_dtypes(df):
    """Convert float extension dtypes (e.g. 'Float64') to standard NumPy float64."""
    import numpy as np
    import pandas as pd

    df = df.copy()

    for col in df.columns:
        dtype = df[col].dtype
        if pd.api.types.is_float_dtype(dtype) and pd.api.types.is_extension_array_dtype(dtype):
            df[col] = df[col].astype(np.float64)

    return df


def _rich_table(
    df,
    *,
    title: str,
    float_format: str,
    panel: bool = False,
    column_info: bool = True,
) -> RenderableType:
    import numpy as np
    from rich.console import Group
    from rich.panel import Panel
    from rich.table import Table

    attrs = df.attrs.copy()

    def fmt(v) -> str:
        if isinstance(v, (float, np.floating)):
            s = "NaN" if np.isnan(v) else float_format % v
            if "e" in s and console.is_terminal:
                s = re.sub(r"\S*\de[+-][0-9]*", lambda m: _to_fancy_sci(m.group()), s)
            return s
        return str(v)

    rows = [
        [fmt(v) for v in row]
        for row in _with_float_nonext_dtypes(df).itertuples(index=False, name=None)
    ]

    def maybe_fancy_col_name(col: str) -> str:
        fancy_col: str | None
        try:
            fancy_col = attrs["fancy_col"][col]
        except KeyError:
            fancy_col = None

        if fancy_col is None or not console.is_terminal:
            return col
        else:
            return fancy_col

    table = Table(title=title)
    for col in df.columns:
        table.add_column(maybe_fancy_col_name(col), style="green" if col != "K" else None)
    for row in rows:
        table.add_row(*row)

    r: RenderableType
    if "col_desc" not in attrs or not column_info:
        r = table
    else:
        l = max(len(str(c.header)) for c in table.columns)  # noqa: E741
        sub_lines = []
        for col in df.columns:
            v = attrs["col_desc"].get(col)
            if v is None:
                continue
            sub_lines.append(f"[bold cyan]{maybe_fancy_col_name(col):{l+2}}[/]{v}")

        r = Group(table, "\n".join(sub_lines))

    return Panel(r, expand=False) if panel else r


def pprint_table(df, *, title: str, float_format: str, panel=False, column_info=True) -> None:
    """Pretty-print a pandas DataFrame as a Rich table."""
    console.print(
        _rich_table(df, title=title, float_format=float_format, panel=panel, column_info=column_info)
    )


def _report(manifest, out: Path) -> None:
    import pandas as pd

    tasks = manifest.tasks
    n_done = sum(t["status"] == "done" for t in tasks.values())
    info(f"{n_done}/{len(tasks)} tasks done, output in {out}")
    for key, t in tasks.items():
        if t["status"] != "done":
            warning(f"- task {key} failed: {t['error']}")
    for key, a in manifest.analysis.items():
        if a["status"] != "done":
            warning(f"- analysis {key} failed: {a['error']}")

    for fn, title in [("qea.csv", "Edwards–Anderson order parameter"), ("eta.csv", "Return-probability exponent")]:
        p = out / "summary" / fn
        if p.is_file():
            pprint_table(pd.read_csv(p), title=title, float_format="%.4g", column_info=False)

    if manifest.status != "complete":
        raise typer.Exit(RC_PARTIAL)


def _run(cfg, *, out: Path | None, workers: int) -> None:
    from .campaign import run_campaign

    out_ = out if out is not None else Path(cfg.output)
    try:
        manifest = run_campaign(cfg, outdir=out_, workers=workers)
    except (ValueError, RuntimeError) as e:
        error(f"Campaign failed. Message: {e}", rc=RC_NUMERICAL, markup=False)

    _report(manifest, out_)


@app.command()
@pretty_warnings
@_maybe_export_output
def simulate(
    config: Path = typer.Option(..., "-c", "--config", help="Campaign config (YAML)."),
    out: Path = typer.Option(None, "-o", "--out", help="Output directory (default: the config's)."),
    workers: int = typer.Option(1, "-j", "--workers", help="Worker processes."),
    seed: int = typer.Option(None, "--seed", help="Override the config's master seed."),
):
    """Run a campaign: evolve every task, then compute the configured summaries.

    Rerunning into the same directory resumes: tasks already done are skipped.
    """
    from dataclasses import replace

    from .campaign import ConfigError, load_config

    try:
        cfg = load_config(config)
    except (ConfigError, OSError) as e:
        error(f"Invalid config. Message: {e}", rc=RC_CONFIG, markup=False)
    if seed is not None:
        cfg = replace(cfg, seed=seed)

    _run(cfg, out=out, workers=workers)


@app.command()
@pretty_warnings
@_maybe_export_output
def analyze(
    run_dir: Path = typer.Argument(..., help="Campaign output directory."),
):
    """Recompute the summary tables of a finished (or partial) campaign from its raw files."""
    from .campaign import ConfigError, analyze, load_config

    try:
        cfg = load_config(run_dir / "config.yaml")
    except (ConfigError, OSError) as e:
        error(f"No usable config in {run_dir}. Message: {e}", rc=RC_CONFIG, markup=False)

    status = analyze(cfg, run_dir)
    failed = {k: v for k, v in status.items() if v["status"] != "done"}
    for k, v in failed.items():
        warning(f"- analysis {k} failed: {v['error']}")
    info(f"summaries written to {run_dir / 'summary'}")
    if failed:
        raise typer.Exit(RC_PARTIAL)


@app.command(name="pair-approx")
@pretty_warnings
@_maybe_export_output
def pair_approx(
    rows: int = typer.Option(4, "--rows", help="Lattice rows."),
    cols: int = typer.Option(4, "--cols", help="Lattice columns."),
    w: float = typer.Option(15.0, "-w", "--disorder", help="Disorder width (units of J)."),
    realizations: int = typer.Option(20, "-r", "--realizations"),
    seed: int = typer.Option(0, "--seed"),
    t_max: float = typer.Option(30.0, "--t-max", help="Largest time (units 1/J)."),
    num: int = typer.Option(13, "--num", help="Number of log-spaced times from 0.01/J."),
    exact: bool = typer.Option(True, help="Also evolve exactly from the Néel state."),
    float_format: str = typer.Option(r"%.4g", help="Format for float-to-string conversion."),
):
    """Typical return probability in the independent-pair approximation (Néel initial state)."""
    import numpy as np
    import pandas as pd

    from .lattice import build_lattice, neel_word
    from .pairapprox import asymptotic_lnR, asymptotic_lnR_exact, compare_pair_exact, typical_pair_R

    try:
        lattice = build_lattice(rows, cols)
    except ValueError as e:
        error(f"Invalid lattice. Message: {e}", rc=RC_CONFIG, markup=False)
    times = np.logspace(-2, np.log10(t_max), num)
    word = neel_word(lattice)

    try:
        if exact:
            df = compare_pair_exact(lattice, w, times, realizations, seed, word=word)
            df = df[["t", "R_pair_typ", "R_exact_typ"]]
        else:
            df = pd.DataFrame({"t": times, "R_pair_typ": typical_pair_R(lattice, w, times, realizations, seed, word=word)})
    except ValueError as e:
        error(f"Invalid input. Message: {e}", rc=RC_CONFIG, markup=False)
    except RuntimeError as e:
        error(f"Evolution failed. Message: {e}", rc=RC_NUMERICAL, markup=False)

    pprint_table(df, title=f"Typical R on {lattice.name}, w={w:g}", float_format=float_format)

    B = len(lattice.bonds)
    if w > 0:
        console.print(
            f"Long-time -ln R_typ: [cyan]{asymptotic_lnR_exact(w, B):.4g}[/] "
            f"(leading order {asymptotic_lnR(w, B):.4g}, B = {B} bonds)",
            highlight=False,
        )


@app.command()
@pretty_warnings
@_maybe_export_output
def thresholds(
    K: list[int] = typer.Option([3, 4, 5, 6], "-K", "--branching", help="Branching numbers."),
    schemes: list[str] = typer.Option(
        ["upper_limit", "self_energy"], "-s", "--scheme", help="upper_limit, self_energy or pool."
    ),
    channels: list[str] = typer.Option(
        ["relaxation", "dephasing"], "--channel", help="relaxation and/or dephasing."
    ),
    pool_size: int = typer.Option(100_000, help="Pool size (scheme 'pool')."),
    pool_sweeps: int = typer.Option(60, help="Pool sweeps (scheme 'pool')."),
    pool_recursion: str = typer.Option(
        "tree", help="Dephasing pool update, tree or upper_limit (scheme 'pool')."
    ),
    pool_sizes: list[int] = typer.Option(
        None, "--pool-sizes", help="Extrapolate over these pool sizes (scheme 'pool')."
    ),
    seed: int = typer.Option(0, "--seed", help="Pool seed (scheme 'pool')."),
    out: Path = typer.Option(None, "-o", "--out", help="Also write the long table as CSV."),
    float_format: str = typer.Option(r"%.4g", help="Format for float-to-string conversion."),
):
    """Cayley-tree relaxation and dephasing thresholds, one table per scheme."""
    from .campaign import run_thresholds, threshold_tables
    from .util import write_table

    try:
        pool_kws = dict(size=pool_size, sweeps=pool_sweeps, seed=seed, recursion=pool_recursion)
        if pool_sizes:
            pool_kws["sizes"] = pool_sizes
        df = run_thresholds(K, schemes, channels, **pool_kws)
    except ValueError as e:
        error(f"Invalid input. Message: {e}", rc=RC_CONFIG, markup=False)
    except RuntimeError as e:
        error(f"Threshold solver failed. Message: {e}", rc=RC_NUMERICAL, markup=False)

    for s, wide in threshold_tables(df).items():
        wide.attrs["col_desc"] = {"channel": "Critical j = J/W per branching number K"}
        pprint_table(wide, title=f"Thresholds, {s.replace('_', ' ')}", float_format=float_format)

    if out is not None:
        write_table(df, out)
        info(f"written to {out}")


@app.command()
@pretty_warnings
@_maybe_export_output
def preset(
    name: str = typer.Argument(None, help="Preset name (omit with --list)."),
    list_: bool = typer.Option(False, "--list", help="List the built-in presets and exit."),
    show: bool = typer.Option(False, "--show", help="Print the preset config instead of running it."),
    out: Path = typer.Option(None, "-o", "--out", help="Output directory (default: the preset's)."),
    workers: int = typer.Option(1, "-j", "--workers", help="Worker processes."),
):
    """Run a built-in campaign preset (e.g. 'fig3-desk' or 'si-tables')."""
    from .campaign import ConfigError, dump_config, list_presets, load_preset

    if list_:
        for p in list_presets():
            console.print(p, highlight=False)
        return
    if name is None:
        error("Give a preset name (see --list).", rc=RC_CONFIG)

    try:
        cfg = load_preset(name)
    except ConfigError as e:
        error(f"{e}", rc=RC_CONFIG, markup=False)

    if show:
        console.print(dump_config(cfg), highlight=False, markup=False, soft_wrap=True)
        return

    _run(cfg, out=out, workers=workers)


_typer_click_object = typer.main.get_command(app)  # for sphinx-click in docs


if __name__ == "__main__":
    app()
