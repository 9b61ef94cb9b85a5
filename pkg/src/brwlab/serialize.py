"""Pinned text formats for reports, raw rows and snapshots.

JSON floats are written with 17 significant digits and keys are sorted, so a
report is a pure function of its contents.  CSV floats use the shortest
round-trip representation.  Non-finite floats become ``null`` in JSON and
``nan``/``inf`` in CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np


def _json_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def _emit(obj, out: list[str], indent: int, level: int) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_json_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            out.append(("," if i else "") + pad + json.dumps(str(key)) + ": ")
            _emit(obj[key], out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            out.append("[]")
            return
        out.append("[")
        for i, item in enumerate(obj):
            out.append(("," if i else "") + pad)
            _emit(item, out, indent, level + 1)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj, indent: int = 1) -> str:
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out) + "\n"


def csv_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([csv_value(v) for v in row])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def snapshot_rows(configs) -> list[tuple[int, int, int]]:
    """``(generation, site, count)`` rows for a sequence of site configurations."""
    rows = []
    for config in configs:
        for site, count in zip(config.sites, config.counts):
            rows.append((config.generation, int(site), int(count)))
    return rows


def write_snapshots(path: Path, configs) -> None:
    write_text(Path(path), csv_text(("generation", "site", "count"), snapshot_rows(configs)))


def read_snapshots(path: Path):
    """Inverse of :func:`write_snapshots`: a list of configurations, one per generation."""
    from .brw_engine import SiteConfiguration

    by_gen: dict[int, dict[int, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_gen.setdefault(int(row["generation"]), {})[int(row["site"])] = int(row["count"])
    return [SiteConfiguration.from_mapping(v, g) for g, v in sorted(by_gen.items())]
