"""Reading and writing field bundles.

Binary layout: one JSON header line terminated by ``\\n``::

    {"magic": "LKCB1", "kind": "square", "G": 20, "F": 15, "mask": false}

then, when ``mask`` is true, ``ceil(K / 8)`` bytes of site-inclusion bitmap
(``numpy.packbits`` little bit order), then ``F * K`` little-endian float64
values, field-major, in the site order documented in :mod:`lkcr.domain`.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .domain import DomainKind, FieldBundle, GridDomain
from .errors import DimensionMismatch, FormatError, InputError

MAGIC = "LKCB1"
_MAX_HEADER = 4096


def dumps_bundle(bundle: FieldBundle) -> bytes:
    header = {
        "magic": MAGIC,
        "kind": bundle.domain.kind.value,
        "G": bundle.domain.grid_size,
        "F": bundle.field_count,
        "mask": bundle.mask is not None,
        "normalized": bool(bundle.normalized),
    }
    parts = [json.dumps(header).encode("ascii") + b"\n"]
    if bundle.mask is not None:
        parts.append(np.packbits(bundle.mask, bitorder="little").tobytes())
    parts.append(bundle.values.astype("<f8", copy=False).tobytes())
    return b"".join(parts)


def loads_bundle(data: bytes) -> FieldBundle:
    nl = data.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise FormatError("no header line terminator found", offset=min(len(data), _MAX_HEADER))
    try:
        header = json.loads(data[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=0) from None
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise FormatError("bad magic, expected LKCB1", offset=0)
    try:
        kind = DomainKind(header["kind"])
        G = header["G"]
        F = header["F"]
        has_mask = header["mask"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad header field: {exc}", offset=0) from None
    if not (isinstance(G, int) and isinstance(F, int) and isinstance(has_mask, bool)) or G < 1 or F < 1:
        raise FormatError("header fields G, F must be positive integers and mask a boolean", offset=0)
    domain = GridDomain(kind, G)
    K = domain.n_sites
    pos = nl + 1
    mask = None
    if has_mask:
        nbytes = (K + 7) // 8
        if len(data) < pos + nbytes:
            raise FormatError("truncated site-inclusion bitmap", offset=len(data))
        mask = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, pos), count=K, bitorder="little").astype(bool)
        pos += nbytes
    payload = len(data) - pos
    if payload % 8:
        raise FormatError("payload is not a whole number of float64 values", offset=pos + payload - payload % 8)
    n = payload // 8
    if n != F * K:
        raise DimensionMismatch(
            f"header declares F={F}, K={K} ({F * K} values) but payload holds {n} values")
    values = np.frombuffer(data, "<f8", n, pos).astype(np.float64).reshape(F, K)
    return FieldBundle(domain, values, mask, normalized=bool(header.get("normalized", False)))


def save_bundle(bundle: FieldBundle, path) -> None:
    Path(path).write_bytes(dumps_bundle(bundle))


def load_bundle(path) -> FieldBundle:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such bundle file: {path}")
    if path.suffix.lower() == ".csv":
        return load_csv_2d(path)
    return loads_bundle(path.read_bytes())


def load_csv_2d(path_or_text) -> FieldBundle:
    """Import a square-grid bundle from CSV with header ``x,y,t1,...,tF``.

    ``x`` and ``y`` are integer site indices in ``0..G-1``; every site must
    appear exactly once.
    """
    if isinstance(path_or_text, (str, Path)) and "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    else:
        text = str(path_or_text)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty CSV", offset=0)
    head = [h.strip() for h in rows[0]]
    if len(head) < 3 or head[0] != "x" or head[1] != "y":
        raise FormatError("CSV header must start with x,y followed by one column per field", offset=0)
    body = [r for r in rows[1:] if r]
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"non-numeric CSV entry: {exc}") from None
    if arr.ndim != 2 or arr.shape[1] != len(head):
        raise FormatError("ragged CSV rows")
    G = int(round(np.sqrt(arr.shape[0])))
    if G * G != arr.shape[0]:
        raise DimensionMismatch(f"{arr.shape[0]} rows is not a square grid")
    ix = arr[:, 0].astype(int)
    iy = arr[:, 1].astype(int)
    if np.any(ix != arr[:, 0]) or np.any(iy != arr[:, 1]) or ix.min() < 0 or iy.min() < 0 or max(ix.max(), iy.max()) >= G:
        raise FormatError("x, y must be integer indices within the grid")
    k = ix + G * iy
    if np.unique(k).size != k.size:
        raise FormatError("duplicate sites in CSV")
    values = np.empty((arr.shape[1] - 2, G * G))
    values[:, k] = arr[:, 2:].T
    return FieldBundle(GridDomain(DomainKind.SQUARE, G), values)


def dump_csv_2d(bundle: FieldBundle) -> str:
    if bundle.domain.kind is not DomainKind.SQUARE:
        raise DimensionMismatch("CSV export is only available for square grids")
    G = bundle.domain.grid_size
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["x", "y"] + [f"t{i + 1}" for i in range(bundle.field_count)])
    for k in range(G * G):
        w.writerow([k % G, k // G] + [repr(float(v)) for v in bundle.values[:, k]])
    return out.getvalue()
