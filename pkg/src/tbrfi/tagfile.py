"""Time-tag files.

Binary layout: an ASCII header of ``key: value`` lines closed by
``end_header``, then packed little-endian records of an 8-byte unsigned
picosecond timestamp followed by a 1-byte channel id.  A ``.csv`` suffix
selects the debugging format ``timestamp_ps,channel``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from tbrfi.photonics import DetectorLayout, TagStream

MAGIC = "TBRFI-TAGS"
VERSION = 1
RECORD = np.dtype([("t", "<u8"), ("ch", "u1")])  # packed, 9 bytes
_COUNT_WIDTH = 20


class TagFormatError(ValueError):
    pass


def _is_csv(path) -> bool:
    return str(path).lower().endswith(".csv")


def _header_bytes(side: str, layout: DetectorLayout, records: int, meta: dict) -> bytes:
    lines = [MAGIC, f"version: {VERSION}", f"side: {side}",
             f"layout: {json.dumps(layout.to_dict(), sort_keys=True)}",
             f"meta: {json.dumps(meta, sort_keys=True)}",
             f"records: {records:0{_COUNT_WIDTH}d}", "end_header"]
    return ("\n".join(lines) + "\n").encode("ascii")


class TagFileWriter:
    """Chunked writer; the file appears atomically on close."""

    def __init__(self, path, side: str, layout: DetectorLayout, meta: dict | None = None):
        self.path = Path(path)
        self.side = side
        self.layout = layout
        self.meta = meta or {}
        self.records = 0
        self._tmp = self.path.with_name(self.path.name + ".part")
        self._fh = open(self._tmp, "wb")
        if _is_csv(self.path):
            self._fh.write(b"timestamp_ps,channel\n")
        else:
            self._fh.write(_header_bytes(side, layout, 0, self.meta))

    def write(self, tags: TagStream) -> None:
        if _is_csv(self.path):
            rows = np.column_stack([tags.t.astype(np.uint64), tags.ch.astype(np.uint64)])
            np.savetxt(self._fh, rows, fmt="%d", delimiter=",")
        else:
            rec = np.empty(len(tags), dtype=RECORD)
            rec["t"] = tags.t
            rec["ch"] = tags.ch
            self._fh.write(rec.tobytes())
        self.records += len(tags)

    def close(self) -> None:
        if self._fh.closed:
            return
        if not _is_csv(self.path):
            self._fh.seek(0)
            self._fh.write(_header_bytes(self.side, self.layout, self.records, self.meta))
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        self._fh.close()
        self._tmp.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.close()
        else:
            self.abort()


def write_tags(path, tags: TagStream, side: str, layout: DetectorLayout, meta: dict | None = None) -> None:
    with TagFileWriter(path, side, layout, meta) as w:
        w.write(tags)


def read_header(path) -> tuple[dict, int]:
    """Parse the header; returns (fields, byte offset of the first record)."""
    fields: dict = {}
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", "replace").strip()
        if first != MAGIC:
            raise TagFormatError(f"{path}: not a tag file (magic {first!r})")
        while True:
            raw = fh.readline()
            if not raw:
                raise TagFormatError(f"{path}: header not terminated")
            line = raw.decode("ascii", "replace").rstrip("\n")
            if line == "end_header":
                break
            key, sep, value = line.partition(": ")
            if not sep:
                raise TagFormatError(f"{path}: malformed header line {line!r}")
            fields[key] = value
        offset = fh.tell()
    try:
        version = int(fields["version"])
    except (KeyError, ValueError) as exc:
        raise TagFormatError(f"{path}: missing or bad version") from exc
    if version != VERSION:
        raise TagFormatError(f"{path}: unsupported tag format version {version} (expected {VERSION})")
    try:
        fields["version"] = version
        fields["records"] = int(fields["records"])
        fields["layout"] = DetectorLayout.from_dict(json.loads(fields["layout"]))
        fields["meta"] = json.loads(fields.get("meta", "{}"))
    except (KeyError, ValueError) as exc:
        raise TagFormatError(f"{path}: bad header: {exc}") from exc
    return fields, offset


def read_tags(path) -> tuple[TagStream, dict]:
    if _is_csv(path):
        return _read_csv(path), {"side": None, "layout": None, "meta": {}}
    fields, offset = read_header(path)
    size = os.path.getsize(path) - offset
    if size != fields["records"] * RECORD.itemsize:
        raise TagFormatError(f"{path}: header says {fields['records']} records but payload "
                             f"holds {size / RECORD.itemsize:g}")
    rec = np.fromfile(path, dtype=RECORD, offset=offset)
    return TagStream(np.ascontiguousarray(rec["t"]), np.ascontiguousarray(rec["ch"])), fields


def _read_csv(path) -> TagStream:
    with open(path) as fh:
        head = fh.readline().strip()
    if head != "timestamp_ps,channel":
        raise TagFormatError(f"{path}: expected CSV header 'timestamp_ps,channel', got {head!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.uint64, ndmin=2)
    if data.size == 0:
        return TagStream.empty()
    return TagStream(data[:, 0].copy(), data[:, 1].astype(np.uint8))
