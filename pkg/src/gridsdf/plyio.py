"""Minimal PLY reader/writer (ascii and binary little-endian)."""

from __future__ import annotations

import numpy as np

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Malformed PLY content; ``offset`` is a byte offset or line number."""

    def __init__(self, msg, offset=None, unit="byte"):
        where = f" (at {unit} {offset})" if offset is not None else ""
        super().__init__(msg + where)
        self.offset = offset


def _parse_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError("missing ply magic or end_header", 0)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    for lineno, raw in enumerate(data[:end].decode("ascii", "replace").splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before element", lineno, "header line")
            if tok[1] == "list":
                if tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise PlyError(f"unknown list type in {raw!r}", lineno, "header line")
                elements[-1]["props"].append((tok[4], "list", _TYPES[tok[2]], _TYPES[tok[3]]))
            else:
                if tok[1] not in _TYPES:
                    raise PlyError(f"unknown property type {tok[1]!r}", lineno, "header line")
                elements[-1]["props"].append((tok[2], "scalar", _TYPES[tok[1]], None))
        else:
            raise PlyError(f"unexpected header line {raw!r}", lineno, "header line")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}", 0)
    return fmt, elements, body_start


def read_ply(path) -> dict:
    """Return ``{element_name: {prop_name: array}}``.

    List properties come back as a list of int arrays, or a 2D array when every
    list has the same length.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, elements, pos = _parse_header(data)
    if fmt == "ascii":
        return _read_ascii(data, elements, pos)
    return _read_binary(data, elements, pos)


def _read_ascii(data, elements, pos):
    lines = data[pos:].decode("ascii", "replace").splitlines()
    header_lines = data[:pos].count(b"\n")
    out = {}
    li = 0
    for el in elements:
        cols = {name: [] for name, *_ in el["props"]}
        for _ in range(el["count"]):
            while li < len(lines) and not lines[li].strip():
                li += 1
            if li >= len(lines):
                raise PlyError(f"unexpected end of data in element {el['name']!r}",
                               header_lines + li + 1, "line")
            tok = lines[li].split()
            ti = 0
            try:
                for name, kind, t1, t2 in el["props"]:
                    if kind == "scalar":
                        cols[name].append(float(tok[ti]))
                        ti += 1
                    else:
                        k = int(tok[ti])
                        cols[name].append([int(x) for x in tok[ti + 1: ti + 1 + k]])
                        if len(cols[name][-1]) != k:
                            raise IndexError
                        ti += 1 + k
            except (IndexError, ValueError):
                raise PlyError(f"bad record {lines[li]!r}", header_lines + li + 1, "line")
            li += 1
        out[el["name"]] = {n: _finish(v, kind) for (n, kind, *_), v in
                           zip(el["props"], cols.values())}
    return out


def _finish(values, kind):
    if kind == "scalar":
        return np.asarray(values, dtype=np.float64)
    lens = {len(v) for v in values}
    if len(lens) == 1:
        return np.asarray(values, dtype=np.int64).reshape(len(values), -1)
    return [np.asarray(v, dtype=np.int64) for v in values]


def _read_binary(data, elements, pos):
    out = {}
    for el in elements:
        props = el["props"]
        if all(kind == "scalar" for _, kind, *_ in props):
            dt = np.dtype([(n, "<" + t) for n, _, t, _ in props])
            nbytes = dt.itemsize * el["count"]
            if pos + nbytes > len(data):
                raise PlyError(f"truncated element {el['name']!r}", pos)
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
            pos += nbytes
            out[el["name"]] = {n: arr[n].astype(np.float64) for n, *_ in props}
            continue
        out[el["name"]], pos = _read_binary_lists(data, el, pos)
    return out


def _read_binary_lists(data, el, pos):
    props = el["props"]
    # Fast path: one list property with constant length 3 (triangle meshes).
    if len(props) == 1 and el["count"] > 0:
        name, _, tcount, titem = props[0]
        ct = np.dtype("<" + tcount)
        if pos + ct.itemsize > len(data):
            raise PlyError(f"truncated element {el['name']!r}", pos)
        k = int(np.frombuffer(data, dtype=ct, count=1, offset=pos)[0])
        dt = np.dtype([("n", "<" + tcount), ("v", "<" + titem, (k,))])
        if pos + dt.itemsize * el["count"] <= len(data):
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
            if np.all(arr["n"] == k):
                return {name: arr["v"].astype(np.int64)}, pos + dt.itemsize * el["count"]
    cols = {name: [] for name, *_ in props}
    for _ in range(el["count"]):
        for name, kind, t1, t2 in props:
            d1 = np.dtype("<" + t1)
            if pos + d1.itemsize > len(data):
                raise PlyError(f"truncated element {el['name']!r}", pos)
            v = np.frombuffer(data, dtype=d1, count=1, offset=pos)[0]
            pos += d1.itemsize
            if kind == "scalar":
                cols[name].append(float(v))
            else:
                d2 = np.dtype("<" + t2)
                k = int(v)
                if pos + d2.itemsize * k > len(data):
                    raise PlyError(f"truncated element {el['name']!r}", pos)
                cols[name].append(np.frombuffer(data, dtype=d2, count=k, offset=pos).tolist())
                pos += d2.itemsize * k
    return {n: _finish(v, kind) for (n, kind, *_), v in zip(props, cols.values())}, pos


def write_ply(path, vertex: dict, faces=None, binary=True) -> None:
    """Write a vertex element (float64 columns, in dict order) and optional triangles."""
    names = list(vertex)
    n = len(vertex[names[0]]) if names else 0
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property double {name}" for name in names]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        cols = np.column_stack([np.asarray(vertex[k], dtype=np.float64) for k in names]) \
            if names else np.zeros((0, 0))
        if binary:
            fh.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())
            if faces is not None:
                f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
                rec = np.zeros(len(f), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                rec["n"] = 3
                rec["v"] = f
                fh.write(rec.tobytes())
        else:
            for row in cols:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
            if faces is not None:
                for a, b, c in np.asarray(faces, dtype=np.int64).reshape(-1, 3):
                    fh.write(f"3 {a} {b} {c}\n".encode("ascii"))
