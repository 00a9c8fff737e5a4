"""Artifact emission: CSV tables, JSONL logs, summaries, state snapshots.

Tables carry a comment header block ('#'-prefixed: config hash and column
units) above the CSV header and are written row by row, so arbitrarily
long series stream without whole-table buffering.  Summaries are JSON
with sorted keys and no timestamps; wall-clock metadata lives in a
sibling run_meta.json so that golden-file comparisons diff cleanly.

State snapshots are binary with a versioned header (magic, version,
dimension, level, mode-table hash) and refuse to load into a mismatched
basis.
"""

from __future__ import annotations

import csv
import json
import struct
import time

import numpy as np

from .basis import build_basis

__all__ = [
    "write_series",
    "write_jsonl",
    "write_summary",
    "write_run_meta",
    "save_snapshot",
    "load_snapshot",
    "export_trajectory_csv",
    "export_ledger_jsonl",
    "SnapshotError",
]

SNAPSHOT_MAGIC = b"LVF1"
SNAPSHOT_VERSION = 1


def write_series(path, columns, rows, *, units=None, config_hash=None, append=False):
    """Stream rows into a CSV file with a comment header block.

    `rows` is any iterable of sequences matching `columns`; it is
    consumed lazily.  Returns the number of rows written.  I/O errors
    surface with the path attached.
    """
    mode = "a" if append else "w"
    n = 0
    try:
        with open(path, mode, newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if not append:
                if config_hash:
                    fh.write(f"# config_hash: {config_hash}\n")
                if units:
                    fh.write("# units: " + ", ".join(f"{c}[{u}]" for c, u in zip(columns, units)) + "\n")
                writer.writerow(columns)
            for row in rows:
                writer.writerow(row)
                n += 1
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc
    return n


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_summary(path, summary):
    """Timestamp-free JSON summary with sorted keys (byte-stable)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_run_meta(path, extra=None):
    """Wall-clock and environment metadata, segregated from the summary."""
    meta = {"wall_time": time.time(), "clock": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(meta), fh, sort_keys=True, indent=2)
        fh.write("\n")


class SnapshotError(RuntimeError):
    pass


def save_snapshot(path, basis, t, coeffs):
    """Binary state snapshot: magic, version, d, m, basis hash, t, coeffs."""
    c = np.asarray(coeffs, dtype="<f8")
    if c.shape != (basis.size,):
        raise ValueError("coefficient shape does not match the basis")
    digest = bytes.fromhex(basis.fingerprint())
    header = struct.pack("<4sIII", SNAPSHOT_MAGIC, SNAPSHOT_VERSION, basis.dim, basis.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(digest)
        fh.write(struct.pack("<d", float(t)))
        fh.write(c.tobytes())


def load_snapshot(path):
    """Load a snapshot, rebuilding and verifying its basis.

    Returns (basis, t, coeffs).  Raises SnapshotError on a bad magic,
    unsupported version, or a mode-table hash mismatch (a snapshot from
    a different basis layout must not be silently reinterpreted).
    """
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sIII"))
        magic, version, dim, size = struct.unpack("<4sIII", head)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"{path}: not a state snapshot")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {version}")
        digest = fh.read(32).hex()
        (t,) = struct.unpack("<d", fh.read(8))
        coeffs = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
    basis = build_basis(size, dim)
    if basis.fingerprint() != digest:
        raise SnapshotError(f"{path}: mode-table hash mismatch")
    return basis, t, coeffs


def export_trajectory_csv(path, traj, basis, *, config_hash=None):
    """Time series of a trajectory: t, |u|, ||u||_1, ||u||_2, jumps so far."""
    eig = basis.eigenvalues
    ksq = basis.ksq

    def rows():
        for t, state in zip(traj.times, traj.states):
            c2 = state**2
            yield (
                f"{t:.12g}",
                f"{np.sqrt(c2.sum()):.12g}",
                f"{np.sqrt((ksq * c2).sum()):.12g}",
                f"{np.sqrt((eig * c2).sum()):.12g}",
                int(np.searchsorted(traj.jump_times, t, side="right")),
            )

    return write_series(
        path,
        ("t", "l2", "h1", "h2", "jump_count"),
        rows(),
        units=("time", "velocity", "velocity/length", "velocity/length^2", "count"),
        config_hash=config_hash,
    )


def export_ledger_jsonl(path, traj):
    if traj.ledger is None:
        raise ValueError("trajectory carries no ledger")
    write_jsonl(path, traj.ledger.rows())
