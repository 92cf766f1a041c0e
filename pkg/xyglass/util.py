from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    import pandas as pd


def get_version(*, git: bool = True) -> str:
    """
    Parameters
    ----------
    git
        Include the short version of the Git hash in the returned version string.
    """
    from . import __version__

    ver = __version__
    if git:
        import subprocess
        import warnings

        repo = Path(__file__).parent.parent

        try:
            cmd = ["git", "-C", repo.as_posix(), "rev-parse", "--verify", "--short", "HEAD"]
            cp = subprocess.run(cmd, text=True, capture_output=True, check=True)
        except Exception:
            warnings.warn(f"Could not get Git hash using command `{' '.join(cmd)}`.")
            hsh = ""
        else:
            hsh = f" ({cp.stdout.strip()})"

        return f"{ver}{hsh}"
    else:
        return ver


def derive_seed(master: int, *index: int) -> int:
    """64-bit key for the stream at `index` under `master`.

    Counter-based: the key depends only on ``(master, *index)``,
    never on the order in which streams are requested,
    so sweeps can be resumed or run out of order.

    >>> derive_seed(1234, 0) == derive_seed(1234, 0)
    True
    >>> derive_seed(1234, 0) != derive_seed(1234, 1)
    True
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(i) for i in index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng(seed: int) -> np.random.Generator:
    """NumPy generator for a 64-bit key."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def write_table(df: pd.DataFrame, path: Path | str, *, float_format: str = "%.12g") -> Path:
    """Write `df` as CSV with a ``<name>.schema.json`` sidecar.

    The sidecar lists the columns in order, their dtypes
    and, when present in ``df.attrs["col_desc"]``, their descriptions.
    Output is deterministic for a given frame.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(p, index=False, float_format=float_format, lineterminator="\n")

    desc = df.attrs.get("col_desc", {})
    schema = {
        "file": p.name,
        "format": "csv",
        "columns": [
            {"name": str(col), "dtype": str(df[col].dtype), "description": desc.get(col, "")}
            for col in df.columns
        ],
    }
    p.with_suffix(".schema.json").write_text(json.dumps(schema, indent=2) + "\n")

    return p
