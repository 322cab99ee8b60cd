"""Versioned text formats for envelope sets, features, draws, tables and reports.

Every file starts with a version tag and every reader rejects unknown tags:

* ``hkq-env-v1``: a JSON header line (key ``schema``), then one amplitude
  per line written with 17 significant digits.
* ``hkq-features-v1``: ``# hkq-features-v1 <schema id>`` then a CSV with
  columns ``file, group, log10_alpha, k, snr_db`` and the feature names.
* ``hkq-draws-v1``: ``# hkq-draws-v1`` then CSV rows
  ``row, group, draw, target, mean, variance``.
* ``hkq-table-v1``: ``# hkq-table-v1`` then CSV ``alpha, k, <features>``,
  plus a JSON sidecar ``<name>.json`` with standardization and metadata.
* ``hkq-report-v1``: ``# hkq-report-v1`` then a CSV of report rows.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hkq import baseline
from hkq.errors import FormatError, InsufficientDataError
from hkq.hk_model import EnvelopeSet, HkParams, Source

ENV_FORMAT = "hkq-env-v1"
FEATURES_FORMAT = "hkq-features-v1"
DRAWS_FORMAT = "hkq-draws-v1"
TABLE_FORMAT = baseline.FORMAT
REPORT_FORMAT = "hkq-report-v1"
ENV_SUFFIX = ".env"


def fmt(x):
    """Shortest decimal that round-trips a float (empty for None/NaN)."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _opt_float(text, line, name):
    if text in ("", None):
        return None
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"not a number: {text!r}", line=line, field=name) from None


def _check_tag(first_line, tag, line=1):
    parts = first_line.strip().lstrip("#").split()
    if not parts or parts[0] != tag:
        found = parts[0] if parts else ""
        raise FormatError(f"expected version {tag!r}, found {found!r}", line=line, field="format")
    return parts[1:]


# -- envelope sets ---------------------------------------------------------------


def write_envelope_file(env, path):
    t = env.truth
    header = {
        "schema": ENV_FORMAT,
        "n": len(env),
        "alpha": None if t is None else t.alpha,
        "k": None if t is None else t.k,
        "sigma": None if t is None else t.sigma,
        "seed": env.seed,
        "snr_db": env.snr_db,
        "source": env.source.value,
        "label": env.label,
    }
    body = "\n".join(f"{x:.17g}" for x in env.samples)
    Path(path).write_text(json.dumps(header, sort_keys=True) + "\n" + body + "\n", encoding="utf-8")


def read_envelope_file(path, source=None):
    """Parse an ``hkq-env-v1`` file. ``source`` overrides the header's tag."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or "schema" not in header:
        raise FormatError("header has no 'schema' entry", line=1, field="schema")
    if header["schema"] != ENV_FORMAT:
        raise FormatError(f"unsupported version {header['schema']!r}", line=1, field="schema")
    values = []
    for i, text in enumerate(lines[1:], start=2):
        text = text.strip()
        if not text:
            continue
        try:
            x = float(text)
        except ValueError:
            raise FormatError(f"non-numeric amplitude {text!r}", line=i) from None
        if not math.isfinite(x) or x < 0:
            raise FormatError(f"amplitude must be finite and >= 0, got {text}", line=i)
        values.append(x)
    if "n" in header and header["n"] != len(values):
        raise FormatError(f"header says n={header['n']}, file has {len(values)} amplitudes", field="n")
    truth = None
    if header.get("alpha") is not None and header.get("k") is not None:
        truth = HkParams(float(header["alpha"]), float(header["k"]), float(header.get("sigma") or 1.0))
    src = Source(source if source is not None else header.get("source", "simulated"))
    return EnvelopeSet(np.array(values), truth, header.get("seed"), header.get("snr_db"), src, header.get("label"))


def envelope_files(directory):
    return sorted(p for p in Path(directory).rglob(f"*{ENV_SUFFIX}") if p.is_file())


# -- patches -----------------------------------------------------------------------


@dataclass
class PatchDirectory:
    path: Path
    patches: list
    region: str

    def __post_init__(self):
        if len(self.patches) < 2:
            raise InsufficientDataError(f"{self.path}: need at least 2 patches, found {len(self.patches)}")


def read_patch_directory(path, region=None):
    """All envelope files under ``path`` as ingested realizations of one region."""
    path = Path(path)
    patches = [read_envelope_file(p, source=Source.INGESTED) for p in envelope_files(path)]
    return PatchDirectory(path, patches, region or path.name)


# -- features ------------------------------------------------------------------------

FEATURE_META = ("file", "group", "log10_alpha", "k", "snr_db")


@dataclass
class FeatureTableFile:
    schema_id: str
    names: list
    values: np.ndarray
    meta: list

    @property
    def groups(self):
        return [m["group"] for m in self.meta]

    def truth(self):
        return np.array([[m["log10_alpha"], m["k"]] for m in self.meta], dtype=np.float64)


def write_features(path, schema, values, meta):
    out = _io.StringIO()
    out.write(f"# {FEATURES_FORMAT} {schema.id}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(list(FEATURE_META) + schema.names)
    for m, row in zip(meta, values):
        w.writerow([fmt(m.get(c)) for c in FEATURE_META] + [fmt(float(v)) for v in row])
    Path(path).write_text(out.getvalue(), encoding="utf-8")


def read_features(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    rest = _check_tag(lines[0], FEATURES_FORMAT)
    if not rest:
        raise FormatError("version line lacks a schema id", line=1, field="schema_id")
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("missing column header", line=2) from None
    if tuple(header[: len(FEATURE_META)]) != FEATURE_META:
        raise FormatError("unexpected leading columns", line=2, field="header")
    names = header[len(FEATURE_META):]
    values, meta = [], []
    for i, row in enumerate(reader, start=3):
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} columns, got {len(row)}", line=i)
        meta.append({
            "file": row[0],
            "group": row[1],
            "log10_alpha": _opt_float(row[2], i, "log10_alpha"),
            "k": _opt_float(row[3], i, "k"),
            "snr_db": _opt_float(row[4], i, "snr_db"),
        })
        vals = [_opt_float(v, i, n) for v, n in zip(row[len(FEATURE_META):], names)]
        if any(v is None for v in vals):
            raise FormatError("missing feature value", line=i)
        values.append(vals)
    arr = np.array(values, dtype=np.float64).reshape(len(values), len(names))
    return FeatureTableFile(rest[0], names, arr, meta)


# -- draws ---------------------------------------------------------------------------


def write_draws(path, draws, groups, targets):
    out = _io.StringIO()
    out.write(f"# {DRAWS_FORMAT}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["row", "group", "draw", "target", "mean", "variance"])
    n, s, t = draws.means.shape
    for i in range(n):
        for j in range(s):
            for q in range(t):
                w.writerow([i, groups[i], j, targets[q], fmt(draws.means[i, j, q]), fmt(draws.variances[i, j, q])])
    Path(path).write_text(out.getvalue(), encoding="utf-8")


def read_draws(path):
    """Returns ``(groups, means, variances, targets)`` with arrays [rows, draws, targets]."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    _check_tag(lines[0], DRAWS_FORMAT)
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header != ["row", "group", "draw", "target", "mean", "variance"]:
        raise FormatError("unexpected column header", line=2, field="header")
    records = []
    targets = []
    for i, row in enumerate(reader, start=3):
        if len(row) != 6:
            raise FormatError(f"expected 6 columns, got {len(row)}", line=i)
        try:
            r, d = int(row[0]), int(row[2])
        except ValueError:
            raise FormatError("row and draw must be integers", line=i) from None
        if row[3] not in targets:
            targets.append(row[3])
        records.append((r, row[1], d, targets.index(row[3]), _opt_float(row[4], i, "mean"), _opt_float(row[5], i, "variance")))
    if not records:
        raise FormatError("no draws", line=3)
    n = max(r[0] for r in records) + 1
    s = max(r[2] for r in records) + 1
    t = len(targets)
    if len(records) != n * s * t:
        raise FormatError(f"{len(records)} records do not fill a {n}x{s}x{t} tensor", field="shape")
    means = np.full((n, s, t), np.nan)
    variances = np.full((n, s, t), np.nan)
    groups = [""] * n
    for r, g, d, q, m, v in records:
        means[r, d, q] = m
        variances[r, d, q] = np.nan if v is None else v
        groups[r] = g
    if np.isnan(means).any():
        raise FormatError("draw tensor has holes", field="shape")
    return groups, means, variances, targets


# -- tables ---------------------------------------------------------------------------


def write_table(table, path, feature_names):
    path = Path(path)
    out = _io.StringIO()
    out.write(f"# {TABLE_FORMAT}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["alpha", "k"] + list(feature_names))
    for p, row in zip(table.params, table.means):
        w.writerow([fmt(p.alpha), fmt(p.k)] + [fmt(float(v)) for v in row])
    path.write_text(out.getvalue(), encoding="utf-8")
    sidecar = {
        "format": TABLE_FORMAT,
        "schema_id": table.schema_id,
        "center": table.center.tolist(),
        "scale": table.scale.tolist(),
        "n_per_point": table.n_per_point,
        "seed": table.seed,
        "repetitions": table.repetitions,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_table(path):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    _check_tag(lines[0], TABLE_FORMAT)
    try:
        side = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError("missing JSON sidecar", field="sidecar") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar is not valid JSON: {exc.msg}", field="sidecar") from None
    if side.get("format") != TABLE_FORMAT:
        raise FormatError(f"unsupported sidecar version {side.get('format')!r}", field="format")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if not header or header[:2] != ["alpha", "k"]:
        raise FormatError("unexpected column header", line=2, field="header")
    params, means = [], []
    for i, row in enumerate(reader, start=3):
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} columns, got {len(row)}", line=i)
        vals = [_opt_float(v, i, n) for v, n in zip(row, header)]
        if any(v is None for v in vals):
            raise FormatError("empty cell", line=i)
        params.append(HkParams(vals[0], vals[1]))
        means.append(vals[2:])
    return baseline.FeatureTable(
        params,
        np.array(means, dtype=np.float64),
        np.array(side["center"], dtype=np.float64),
        np.array(side["scale"], dtype=np.float64),
        side["schema_id"],
        int(side["n_per_point"]),
        int(side["seed"]),
        int(side.get("repetitions", 10)),
    )


# -- reports ---------------------------------------------------------------------------


def write_report(path, rows, columns=None):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    out = _io.StringIO()
    out.write(f"# {REPORT_FORMAT}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    Path(path).write_text(out.getvalue(), encoding="utf-8")


def read_report(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    _check_tag(lines[0], REPORT_FORMAT)
    return list(csv.DictReader(lines[1:]))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_summary(summary):
    return json.dumps(_plain(summary), sort_keys=True, indent=2) + "\n"


def write_summary(path, summary):
    Path(path).write_text(dumps_summary(summary), encoding="utf-8")
