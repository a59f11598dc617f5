"""On-disk formats: matrix dumps, parameter checkpoints and result CSVs.

Matrix file (``.mat``)::

    bytes 0-3    magic b"BFPM"
    bytes 4-11   rows, uint64 little-endian
    bytes 12-19  cols, uint64 little-endian
    then         rows*cols float64 little-endian values, row-major

Parameter file (``.params``)::

    bytes 0-3    magic b"BFPP"
    bytes 4-7    number of entries, uint32 little-endian
    per entry    uint16 name length, UTF-8 name, then one matrix record
                 (magic + header + values as above)

Biases are stored as ``n x 1`` matrices.  Both formats round-trip float64
values bit-exactly.
"""

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .network import Affine, NetworkParams

MATRIX_MAGIC = b"BFPM"
PARAMS_MAGIC = b"BFPP"
_HEADER = struct.Struct("<4sQQ")

ACCURACY_COLUMNS = ("after_task", "eval_task", "mode", "accuracy")
SPECTRUM_COLUMNS = ("k", "s_k", "proj_acc_k")
CKA_COLUMNS = ("t", "seen", "unseen")


def matrix_bytes(M) -> bytes:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got shape {M.shape}")
    rows, cols = M.shape
    return _HEADER.pack(MATRIX_MAGIC, rows, cols) + M.astype("<f8").tobytes(order="C")


def _parse_matrix(raw, offset=0):
    if len(raw) - offset < _HEADER.size:
        raise FormatError("truncated matrix header", offset)
    magic, rows, cols = _HEADER.unpack_from(raw, offset)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad matrix magic {magic!r}", offset)
    start = offset + _HEADER.size
    end = start + 8 * rows * cols
    if end > len(raw):
        raise FormatError(f"matrix payload needs {8 * rows * cols} bytes, {len(raw) - start} present", start)
    M = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=start).reshape(rows, cols)
    return M.astype(np.float64), end


def parse_matrix(raw: bytes):
    M, end = _parse_matrix(raw)
    if end != len(raw):
        raise FormatError(f"{len(raw) - end} trailing bytes after matrix", end)
    return M


def save_matrix(path, M):
    Path(path).write_bytes(matrix_bytes(M))


def load_matrix(path):
    return parse_matrix(Path(path).read_bytes())


def _named_arrays(params: NetworkParams):
    out = []
    for i, layer in enumerate(params.layers):
        out += [(f"layer{i}.weight", layer.weight), (f"layer{i}.bias", layer.bias)]
    return out + [("head.weight", params.head.weight), ("head.bias", params.head.bias)]


def params_bytes(params: NetworkParams) -> bytes:
    entries = _named_arrays(params)
    parts = [PARAMS_MAGIC, struct.pack("<I", len(entries))]
    for name, arr in entries:
        key = name.encode("utf-8")
        parts += [struct.pack("<H", len(key)), key, matrix_bytes(arr)]
    return b"".join(parts)


def parse_params(raw: bytes) -> NetworkParams:
    if raw[:4] != PARAMS_MAGIC:
        raise FormatError(f"bad parameter-file magic {raw[:4]!r}", 0)
    if len(raw) < 8:
        raise FormatError("truncated parameter-file header", 4)
    (count,) = struct.unpack_from("<I", raw, 4)
    pos, arrays = 8, {}
    for _ in range(count):
        if pos + 2 > len(raw):
            raise FormatError("truncated entry name length", pos)
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2 : pos + 2 + n].decode("utf-8")
        M, pos = _parse_matrix(raw, pos + 2 + n)
        arrays[name] = M
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after parameters", pos)
    n_layers = sum(1 for k in arrays if k.endswith(".weight")) - 1
    try:
        layers = [Affine(arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"][:, 0]) for i in range(n_layers)]
        head = Affine(arrays["head.weight"], arrays["head.bias"][:, 0])
    except KeyError as exc:
        raise FormatError(f"missing entry {exc.args[0]}", len(raw)) from None
    return NetworkParams(layers, head)


def save_params(path, params):
    Path(path).write_bytes(params_bytes(params))


def load_params(path):
    return parse_params(Path(path).read_bytes())


def _fmt(v):
    # repr round-trips floats exactly and is stable across runs
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def accuracy_rows(accuracy):
    """Rows ``(after_task, eval_task, mode, accuracy)`` with 1-based task ids."""
    rows = []
    for mode, a in accuracy.items():
        T = a.n_tasks
        for t in range(T):
            for i in range(t + 1):
                if not np.isnan(a[i, t]):
                    rows.append((t + 1, i + 1, mode, a[i, t]))
    return rows


def write_csv(path, columns, rows):
    Path(path).write_text(csv_text(columns, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(json_text(obj))


def read_json(path):
    return json.loads(Path(path).read_text())
