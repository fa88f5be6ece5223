"""Text formats, run configuration and atomic output."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import Design, ValidationError, validate_dataset

ENV_PREFIX = "TIMESTATE_"


def fmt(x) -> str:
    """Shortest text that reads back to the same float."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return "NA"
    return str(x)


def _lines(path):
    """Yield (line number, fields) of non-comment, non-blank lines."""
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield no, line.split("\t")


# -- reading -------------------------------------------------------------------

def read_design(path):
    """Read a design TSV with columns sample, time, replicate [, label].

    Returns ``(design, sample_order)`` where ``sample_order`` lists the sample
    ids grouped by time point and sorted by replicate index.
    """
    rows = _lines(path)
    try:
        no, header = next(rows)
    except StopIteration:
        raise ValidationError(f"{path}: empty design file") from None
    header = [h.strip().lower() for h in header]
    need = ["sample", "time", "replicate"]
    if header[:3] != need or len(header) > 4 or (len(header) == 4 and header[3] != "label"):
        raise ValidationError(
            f"{path}:{no}: design header must be 'sample, time, replicate[, label]'")
    entries = {}
    labels = {}
    for no, f in rows:
        if len(f) != len(header):
            raise ValidationError(f"{path}:{no}: expected {len(header)} fields, got {len(f)}")
        sample = f[0].strip()
        try:
            t, r = int(f[1]), int(f[2])
        except ValueError:
            raise ValidationError(f"{path}:{no}: time and replicate must be integers") from None
        if t < 1 or r < 1:
            raise ValidationError(f"{path}:{no}: time and replicate indices start at 1")
        if sample in entries:
            raise ValidationError(f"{path}:{no}: duplicate sample id {sample!r}")
        if (t, r) in {v for v in entries.values()}:
            raise ValidationError(f"{path}:{no}: time {t} replicate {r} listed twice")
        entries[sample] = (t, r)
        if len(f) == 4:
            lab = f[3].strip()
            if labels.setdefault(t, lab) != lab:
                raise ValidationError(f"{path}:{no}: conflicting labels for time {t}")
    if not entries:
        raise ValidationError(f"{path}: design lists no samples")
    times = sorted({t for t, _ in entries.values()})
    if times != list(range(1, len(times) + 1)):
        raise ValidationError(f"{path}: time indices must run 1..T without gaps")
    order = sorted(entries, key=lambda s: entries[s])
    reps = tuple(sum(1 for t, _ in entries.values() if t == k) for k in times)
    tl = tuple(labels[k] for k in times) if len(labels) == len(times) else None
    return Design(reps, tl), order


def ingest_tsv(path, design_path):
    """Read an expression matrix and its design into a validated dataset.

    The expression TSV has a header ``gene_id, <sample ids...>`` and one row
    per gene; columns may appear in any order and are rearranged so that the
    replicates of each time point are adjacent.
    """
    design, order = read_design(design_path)
    rows = _lines(path)
    try:
        no, header = next(rows)
    except StopIteration:
        raise ValidationError(f"{path}: empty expression file") from None
    samples = [h.strip() for h in header[1:]]
    if len(set(samples)) != len(samples):
        dup = next(s for s in samples if samples.count(s) > 1)
        raise ValidationError(f"{path}:{no}: duplicate sample column {dup!r}")
    pos = {s: i for i, s in enumerate(samples)}
    missing = [s for s in order if s not in pos]
    if missing:
        raise ValidationError(f"{path}: design sample {missing[0]!r} has no column")
    extra = [s for s in samples if s not in set(order)]
    if extra:
        raise ValidationError(f"{path}: column {extra[0]!r} is not in the design")
    cols = [pos[s] for s in order]
    ids, values = [], []
    for no, f in rows:
        if len(f) != len(samples) + 1:
            raise ValidationError(
                f"{path}:{no}: expected {len(samples) + 1} fields, got {len(f)}")
        try:
            v = [float(x) for x in f[1:]]
        except ValueError:
            raise ValidationError(f"{path}:{no}: non-numeric expression value") from None
        ids.append(f[0].strip())
        values.append([v[c] for c in cols])
    if not values:
        raise ValidationError(f"{path}: no gene rows")
    return validate_dataset(np.array(values), design, ids)


def read_params(path):
    from .params import ModelParams
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    d.pop("_meta", None)
    return ModelParams.from_dict(d)


# -- writing -------------------------------------------------------------------

def _meta_line(meta):
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items())


class OutputBatch:
    """Stage files in temporaries and rename them into place together.

    Nothing appears under the final names unless the ``with`` block exits
    cleanly.
    """

    def __init__(self, directory, meta=None):
        self.dir = Path(directory)
        self.meta = dict(meta or {})
        self._staged = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def _stage(self, name, text):
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._staged.append((tmp, self.dir / name))
        return self.dir / name

    def tsv(self, name, header, rows):
        out = [_meta_line(self.meta), "\t".join(header)]
        out.extend("\t".join(fmt(x) for x in r) for r in rows)
        return self._stage(name, "\n".join(out) + "\n")

    def json(self, name, obj):
        doc = {"_meta": self.meta}
        doc.update(obj)
        return self._stage(name, json.dumps(doc, indent=2, sort_keys=False) + "\n")

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for tmp, final in self._staged:
                os.replace(tmp, final)
        else:
            for tmp, _ in self._staged:
                try:
                    os.unlink(tmp)
                except FileNotFoundError:
                    pass
        self._staged = []
        return False


def dataset_tables(dataset):
    """(expression header, rows), (design header, rows) for a dataset."""
    d = dataset.design
    times = d.column_times()
    reps = np.concatenate([np.arange(1, n + 1) for n in d.replicates])
    names = [f"{d.time_labels[t]}_r{r}" for t, r in zip(times, reps)]
    expr = (["gene_id"] + names,
            [[g] + list(row) for g, row in zip(dataset.gene_ids, dataset.values)])
    design = (["sample", "time", "replicate", "label"],
              [[s, int(t) + 1, int(r), d.time_labels[t]] for s, t, r in zip(names, times, reps)])
    return expr, design


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    """Settings shared by the subcommands.

    Values come from (lowest to highest precedence) defaults, a JSON config
    file, ``TIMESTATE_*`` environment variables and command-line flags.
    """

    order: str = "first"
    criterion: str = "mmp"
    rel_tol: float = 1e-6
    max_iters: int = 500
    threads: int = 1
    seed: int = 0
    deterministic: bool = True
    multi_start: int = 0
    mean_update: str = "exact"
    genes: int = 4000
    replicates: tuple = (4, 4, 4, 4)
    time_labels: tuple = None
    replications: int = 10
    methods: tuple = ("first", "zero", "pairwise")
    baseline_mean: float = 7.0
    baseline_sd: float = 2.0
    grid_points: int = 201

    def validate(self):
        from .em import MEAN_UPDATES
        from .params import ORDERS
        from .simulation import METHODS
        checks = [
            (self.order in ORDERS, f"order must be one of {ORDERS}"),
            (self.criterion in ("mmp", "mjp"), "criterion must be mmp or mjp"),
            (self.rel_tol > 0, "rel_tol must be positive"),
            (self.max_iters >= 1, "max_iters must be at least 1"),
            (self.threads >= 1, "threads must be at least 1"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.multi_start >= 0, "multi_start must be non-negative"),
            (self.mean_update in MEAN_UPDATES, f"mean_update must be one of {MEAN_UPDATES}"),
            (self.genes >= 1, "genes must be at least 1"),
            (self.replications >= 1, "replications must be at least 1"),
            (set(self.methods) <= set(METHODS) and len(self.methods) > 0,
             f"methods must be drawn from {METHODS}"),
            (self.baseline_sd > 0, "baseline_sd must be positive"),
            (self.grid_points >= 2, "grid_points must be at least 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(f"config: {msg}")
        Design(tuple(self.replicates), self.time_labels)
        return self

    def fit_config(self):
        from .em import FitConfig
        return FitConfig(max_iter=self.max_iters, rel_tol=self.rel_tol, n_jobs=self.threads,
                         deterministic=self.deterministic, multi_start=self.multi_start,
                         seed=self.seed, mean_update=self.mean_update)

    def design(self):
        return Design(tuple(self.replicates), self.time_labels)

    def to_dict(self):
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TUPLE_INT = {"replicates"}
_TUPLE_STR = {"time_labels", "methods"}


def _coerce(key, value):
    default = _FIELDS[key].default
    if key in _TUPLE_INT:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return tuple(int(v) for v in value)
    if key in _TUPLE_STR:
        if value is None:
            return None
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(str(v) for v in value)
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValidationError(f"config: {key} expects a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"config: {key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def build_config(file_path=None, env=None, overrides=None) -> RunConfig:
    """Merge config file, environment and explicit overrides, then validate.

    Unknown keys in the file or the overrides raise ValidationError.
    """
    values = {}
    if file_path is not None:
        with open(file_path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValidationError(f"{file_path}: config must be a JSON object")
        unknown = sorted(set(data) - set(_FIELDS))
        if unknown:
            raise ValidationError(f"{file_path}: unknown config keys {unknown}")
        values.update(data)
    env = os.environ if env is None else env
    for key in _FIELDS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = env[name]
    for key, v in (overrides or {}).items():
        if key not in _FIELDS:
            raise ValidationError(f"unknown config key {key!r}")
        if v is not None:
            values[key] = v
    try:
        coerced = {k: _coerce(k, v) for k, v in values.items()}
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"config: {exc}") from None
    return RunConfig(**coerced).validate()
