"""CSV ingestion and report files.

Reports are written twice: a CSV (``# key = value`` audit lines, a header,
then rows) that :func:`parse_report` reads back losslessly, and an aligned
text rendering for people.  Floats are written with ``repr`` so they survive
the round trip exactly.
"""
from __future__ import annotations

import csv
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import EmptyFile, ParseError, SchemaError

MISSING = {"", "na", "nan", "null", "none", "."}


def _sort_labels(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _number(text, name, line):
    if text.strip().lower() in MISSING:
        raise ParseError(f"missing value in column {name!r}", line)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {name!r}: {text!r} is not a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {name!r}: {text!r} is not finite", line)
    return value


def _label(text, name, line):
    text = text.strip()
    if text.lower() in MISSING:
        raise ParseError(f"missing value in column {name!r}", line)
    return text


def read_dataset(path, mapping: dict | None = None) -> Dataset:
    """Read a header CSV into a :class:`Dataset`.

    ``mapping`` names the columns: ``y``, ``delta``, ``x``, ``w`` and either
    ``z`` (one column of treatment labels) or ``z_dummies`` (list of dummy
    columns, the all-zero row being the reference level).
    """
    mapping = dict(mapping or {})
    cols = {key: mapping.get(key, key) for key in ("y", "delta", "x", "w")}
    z_col = mapping.get("z")
    dummies = mapping.get("z_dummies")
    if isinstance(dummies, str):
        dummies = [c.strip() for c in dummies.split(",") if c.strip()]
    if z_col is None and not dummies:
        z_col = "z"
    if z_col is not None and dummies:
        raise SchemaError("give either a treatment column or dummy columns, not both")
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise EmptyFile(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path} has no header row")
        header = [h.strip() for h in header]
        needed = list(cols.values()) + ([z_col] if z_col else list(dummies))
        absent = [c for c in needed if c not in header]
        if absent:
            raise SchemaError(f"{path}: missing column(s) {', '.join(absent)}")
        pos = {name: header.index(name) for name in needed}
        y, delta, x, w_lab, z_lab, z_vec = [], [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            y.append(_number(row[pos[cols["y"]]], cols["y"], line))
            if y[-1] < 0:
                raise ParseError("durations must be non-negative", line)
            d = _number(row[pos[cols["delta"]]], cols["delta"], line)
            if d not in (0.0, 1.0):
                raise ParseError(f"event indicator must be 0 or 1, got {row[pos[cols['delta']]]!r}", line)
            delta.append(int(d))
            x.append(_number(row[pos[cols["x"]]], cols["x"], line))
            w_lab.append(_label(row[pos[cols["w"]]], cols["w"], line))
            if z_col:
                z_lab.append(_label(row[pos[z_col]], z_col, line))
            else:
                vec = tuple(_number(row[pos[c]], c, line) for c in dummies)
                if any(v not in (0.0, 1.0) for v in vec) or sum(vec) > 1:
                    raise ParseError("treatment dummies must be 0/1 with at most one 1", line)
                z_vec.append(vec)
    if not y:
        raise EmptyFile(f"{path} has a header but no data rows")

    w_levels = _sort_labels(set(w_lab))
    if z_col:
        z_levels = _sort_labels(set(z_lab))
        book = None
        z_idx = [z_levels.index(v) for v in z_lab]
        z_labels = tuple(z_levels)
    else:
        # reference level first, then the level whose dummy is column j
        codes = [tuple(0.0 for _ in dummies)]
        codes += [tuple(1.0 if j == i else 0.0 for j in range(len(dummies))) for i in range(len(dummies))]
        book = np.array(codes)
        z_idx = [codes.index(v) for v in z_vec]
        z_labels = ("reference",) + tuple(dummies)
        z_levels = z_labels
    if len(z_levels) != len(w_levels):
        raise SchemaError(
            f"treatment has {len(z_levels)} levels but the instrument has {len(w_levels)}; "
            "the model needs the instrument to have the same number of levels as the treatment")
    w_idx = [w_levels.index(v) for v in w_lab]
    return Dataset(np.array(y), np.array(delta), np.array(z_idx), np.array(x), np.array(w_idx),
                   z_codebook=book, z_labels=z_labels, w_labels=tuple(w_levels), source=str(path))


def write_dataset(data: Dataset, path) -> None:
    """CSV with columns ``y, delta, z, x, w`` (levels as their labels)."""
    rows = [("y", "delta", "z", "x", "w")]
    for obs in data.observations():
        rows.append((repr(obs.y), obs.delta, data.z_labels[obs.z_index], repr(obs.x),
                     data.w_labels[obs.w_index]))
    _atomic_write(path, _csv_text(rows))


# -- reports -----------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, dict):
        return " ".join(f"{k}:{_fmt(v)}" for k, v in value.items())
    return str(value)


def _csv_text(rows) -> str:
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, columns, rows) -> None:
    """Plain CSV table, written atomically."""
    _atomic_write(path, _csv_text([list(columns)] + [[_fmt(v) for v in row] for row in rows]))


def render_text(title: str, columns, rows, audit: dict | None = None) -> str:
    cells = [list(columns)] + [[_short(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(columns))]
    lines = [title, ""]
    for i, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if i and _numeric(c) else c.ljust(w)
                               for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    if audit:
        lines += ["", "audit:"]
        lines += [f"  {k}: {_fmt(v)}" for k, v in audit.items()]
    return "\n".join(lines) + "\n"


def _short(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "nan" if not math.isfinite(value) else f"{float(value):.3f}"
    return _fmt(value)


def _numeric(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def write_report(stem, title: str, columns, rows, audit: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.txt``; returns both paths."""
    stem = Path(stem)
    csv_path, txt_path = stem.with_suffix(".csv"), stem.with_suffix(".txt")
    head = [f"# {k} = {_fmt(v)}\n" for k, v in (audit or {}).items()]
    body = _csv_text([list(columns)] + [[_fmt(v) for v in row] for row in rows])
    _atomic_write(csv_path, "".join(head) + body)
    _atomic_write(txt_path, render_text(title, columns, rows, audit))
    return csv_path, txt_path


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_report(path):
    """Inverse of :func:`write_report` for the CSV file: ``(columns, rows, audit)``."""
    audit, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not lines:
                key, _, value = line[2:].rstrip("\n").partition(" = ")
                audit[key] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader, None)
    if columns is None:
        raise EmptyFile(f"{path} holds no table")
    rows = [[_parse_cell(c) for c in row] for row in reader]
    return columns, rows, audit
