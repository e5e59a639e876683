"""Trajectory records: CSV sample tables and flat binary field snapshots.

CSV layout::

    # schema = oldroyd-fsi-record 1.0
    # <key> = <value>        (resolved configuration, one line per key)
    col_a,col_b,...
    <rows>

Doubles are written with ``repr`` (shortest round-trip decimal), so reading a
file back reproduces every value bit for bit. Missing entries are written as
``NA``.

Snapshot layout (little endian)::

    magic b"OFSNAP"  | u16 major | u16 minor | f64 time | u32 field count
    per field: u16 name length | name (ascii) | u32 ndim | ndim x u64 dims
    then the field data, row-major float64, in header order
"""

import csv
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

SCHEMA_NAME = "oldroyd-fsi-record"
SCHEMA_MAJOR, SCHEMA_MINOR = 1, 0
MAGIC = b"OFSNAP"
MISSING = "NA"


class RecordError(ValueError):
    pass


# --- CSV ------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return MISSING
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(s):
    if s == MISSING:
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def format_csv(columns, rows, config_lines=()):
    buf = io.StringIO()
    buf.write(f"# schema = {SCHEMA_NAME} {SCHEMA_MAJOR}.{SCHEMA_MINOR}\n")
    for line in config_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise RecordError(f"row has {len(row)} entries, header has {len(columns)}")
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, config_lines=()):
    text = format_csv(columns, rows, config_lines)
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


def read_csv(path):
    """Returns ``(config_lines, columns, rows)`` with numbers parsed exactly."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# schema ="):
        raise RecordError(f"{path}: missing schema line")
    _check_version(lines[0].split("=", 1)[1].strip(), path)
    config, i = [], 1
    while i < len(lines) and lines[i].startswith("#"):
        config.append(lines[i][1:].strip())
        i += 1
    if i >= len(lines):
        raise RecordError(f"{path}: missing header row")
    reader = csv.reader(lines[i:])
    columns = next(reader)
    rows = []
    for row in reader:
        if len(row) != len(columns):
            raise RecordError(f"{path}: ragged row {row!r}")
        rows.append([_parse(s) for s in row])
    return config, columns, rows


def _check_version(tag, where):
    name, _, version = tag.partition(" ")
    if name != SCHEMA_NAME:
        raise RecordError(f"{where}: unknown schema {name!r}")
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise RecordError(f"{where}: unreadable schema version {version!r}") from None
    if major != SCHEMA_MAJOR:
        raise RecordError(f"{where}: schema major version {major} not supported "
                          f"(reader is {SCHEMA_MAJOR})")


# --- binary snapshots ---------------------------------------------------------------

def encode_snapshot(t, fields):
    """``fields`` maps ascii names to float arrays."""
    head = [MAGIC, struct.pack("<HHdI", SCHEMA_MAJOR, SCHEMA_MINOR, float(t), len(fields))]
    body = []
    for name, arr in fields.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("ascii")
        head.append(struct.pack("<H", len(raw)) + raw)
        head.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.append(arr.tobytes(order="C"))
    return b"".join(head + body)


class _Reader:
    def __init__(self, data, where):
        self.data, self.pos, self.where = data, 0, where

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise RecordError(f"{self.where}: truncated at byte offset {len(self.data)} "
                              f"while reading {what} (needed bytes {self.pos}..{self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_snapshot(data, where="snapshot"):
    r = _Reader(data, where)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise RecordError(f"{where}: bad magic at byte offset 0")
    major, minor, t, count = r.unpack("<HHdI", "header")
    if major != SCHEMA_MAJOR:
        raise RecordError(f"{where}: snapshot major version {major} not supported")
    specs = []
    for k in range(count):
        (n,) = r.unpack("<H", f"name length of field {k}")
        name = r.take(n, f"name of field {k}").decode("ascii")
        (ndim,) = r.unpack("<I", f"rank of {name}")
        if ndim > 8:
            raise RecordError(f"{where}: corrupted dimensions header for {name!r} "
                              f"(rank {ndim}) at byte offset {r.pos - 4}")
        dims = r.unpack(f"<{ndim}Q", f"dimensions of {name}")
        specs.append((name, dims))
    out = {}
    for name, dims in specs:
        n = int(np.prod(dims)) if dims else 1
        raw = r.take(8 * n, f"data of {name}")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(float)
    if r.pos != len(data):
        raise RecordError(f"{where}: {len(data) - r.pos} trailing bytes after offset {r.pos}")
    return t, out


def write_snapshot(path, t, fields):
    with open(path, "wb") as fh:
        fh.write(encode_snapshot(t, fields))


def read_snapshot(path):
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read(), str(path))


# --- trajectory records ------------------------------------------------------------

def snapshot_fields(state):
    """Flat arrays for one coupled state."""
    return {"u": state.fluid.u, "v": state.fluid.v, "p": state.fluid.p,
            "T": state.stress.comps, "eta": state.shell.eta, "etadot": state.shell.etadot}


def expected_shapes(nx, ny):
    return {"u": (ny, nx), "v": (ny + 1, nx), "p": (ny, nx), "T": (3, ny, nx),
            "eta": (nx,), "etadot": (nx,)}


def _config_value(config_lines, key):
    for line in config_lines:
        k, _, v = line.partition("=")
        if k.strip() == key:
            return v.strip()
    return None


@dataclass
class TrajectoryRecord:
    config: list
    columns: list
    rows: list
    snapshots: list = field(default_factory=list)  # (t, {name: array})

    def __post_init__(self):
        self.validate()

    @property
    def grid(self):
        nx, ny = _config_value(self.config, "nx"), _config_value(self.config, "ny")
        return (int(nx), int(ny)) if nx is not None and ny is not None else None

    def column(self, name):
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def validate(self):
        if self.rows and "t" in self.columns:
            t = self.column("t")
            if np.any(np.diff(t) <= 0):
                raise RecordError("sample times must be strictly increasing")
        if self.snapshots:
            ts = [s[0] for s in self.snapshots]
            if np.any(np.diff(ts) <= 0):
                raise RecordError("snapshot times must be strictly increasing")
            grid = self.grid
            if grid is None:
                raise RecordError("snapshots need nx and ny in the config echo")
            want = expected_shapes(*grid)
            for t, fields_ in self.snapshots:
                for name, arr in fields_.items():
                    if name in want and tuple(np.shape(arr)) != want[name]:
                        raise RecordError(f"snapshot at t = {t!r}: {name} has shape "
                                          f"{tuple(np.shape(arr))}, grid needs {want[name]}")

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        if (self.config, self.columns) != (other.config, other.columns):
            return False
        if len(self.rows) != len(other.rows) or len(self.snapshots) != len(other.snapshots):
            return False
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b, equal_nan=True))
        if not all(same(a, b) for ra, rb in zip(self.rows, other.rows) for a, b in zip(ra, rb)):
            return False
        for (ta, fa), (tb, fb) in zip(self.snapshots, other.snapshots):
            if ta != tb or fa.keys() != fb.keys():
                return False
            if not all(np.array_equal(fa[k], fb[k]) for k in fa):
                return False
        return True


def write_record(record, path, name="timeseries.csv"):
    """Writes ``path/<name>`` and ``path/snapshot_<k>.bin``."""
    record.validate()
    os.makedirs(path, exist_ok=True)
    write_csv(os.path.join(path, name), record.columns, record.rows, record.config)
    for k, (t, fields_) in enumerate(record.snapshots):
        write_snapshot(os.path.join(path, f"snapshot_{k:05d}.bin"), t, fields_)


def read_record(path, name="timeseries.csv"):
    config, columns, rows = read_csv(os.path.join(path, name))
    snaps = sorted(f for f in os.listdir(path) if f.startswith("snapshot_") and f.endswith(".bin"))
    snapshots = [read_snapshot(os.path.join(path, f)) for f in snaps]
    return TrajectoryRecord(config, columns, rows, snapshots)


def check_compatible(a, b):
    """Records from different grids or geometries cannot be compared."""
    keys = ("Lx", "Ly", "L", "nx", "ny", "dt")
    diff = [k for k in keys if _config_value(a.config, k) != _config_value(b.config, k)]
    if diff:
        raise RecordError("records come from different configurations: "
                          + ", ".join(f"{k} {_config_value(a.config, k)} vs "
                                      f"{_config_value(b.config, k)}" for k in diff))


def state_from_snapshot(t, fields_, eps=0.0):
    """Rebuild a ``CoupledState`` written by ``snapshot_fields``."""
    from .coupling import CoupledState
    from .fluid import FluidState
    from .shell import ShellState
    from .solute import StressField
    return CoupledState(ShellState(fields_["eta"], fields_["etadot"], t),
                        FluidState(fields_["u"], fields_["v"], fields_["p"], t),
                        StressField(fields_["T"], t, eps), t)
