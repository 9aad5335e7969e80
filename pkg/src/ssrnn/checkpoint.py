"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4s   b"SSRN"
    version u8   currently 1
    -- payload --
    precision u8        32 or 64 (bits per weight)
    cell kind u8        0=rnn 1=lstm 2=gru
    gating u8           0=standard 1=sih
    topology kind u8    0=full 1=group 2=band 3=diagonal
    topo param u32      G for group, C for band, else 0
    n_hidden u32, n_input u32, n_layers u32, n_out u32 (0 = no readout)
    activation u8       0=tanh 1=relu
    gate manifest: u8 count, then one ascii byte per gate in order
    array table: u16 count, then per array:
        name u16-length-prefixed utf8, ndim u8, dims u32 each,
        raw IEEE-754 data little-endian
    -- end payload --
    crc32 u32 over the payload

Round-tripping a model reproduces every weight bit-exactly; a checksum
mismatch refuses the load.
"""

import struct
import zlib

import numpy as np

from .cells import CellParams, CellSpec, GATE_ORDER
from .connectivity import StructuredMatrix, Topology

MAGIC = b"SSRN"
VERSION = 1

_CELL_CODES = {"rnn": 0, "lstm": 1, "gru": 2}
_GATING_CODES = {"standard": 0, "sih": 1}
_TOPO_CODES = {"full": 0, "group": 1, "band": 2, "diagonal": 3}
_ACT_CODES = {"tanh": 0, "relu": 1}

_CELL_NAMES = {v: k for k, v in _CELL_CODES.items()}
_GATING_NAMES = {v: k for k, v in _GATING_CODES.items()}
_TOPO_NAMES = {v: k for k, v in _TOPO_CODES.items()}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(IOError):
    """Malformed, truncated, or corrupted checkpoint."""


def _pack_array(name, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    out = [struct.pack("<H", len(name.encode()))]
    out.append(name.encode())
    out.append(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        out.append(struct.pack("<I", d))
    out.append(arr.astype(f"<f{arr.itemsize}", copy=False).tobytes())
    return b"".join(out)


def _collect_arrays(spec, cell, w_out=None, b_out=None):
    arrays = []
    for k in spec.input_keys:
        arrays.append((f"w_in/{k}", cell.w_in[k]))
    for g in spec.gates:
        arrays.append((f"w_rec/{g}", cell.w_rec[g].data))
    for g in spec.gates:
        arrays.append((f"bias/{g}", cell.bias[g]))
    if w_out is not None:
        arrays.append(("w_out", w_out))
        arrays.append(("b_out", b_out))
    return arrays


def dumps(spec, cell, w_out=None, b_out=None, precision=64):
    """Serialize a cell (optionally with a readout head) to bytes."""
    if precision not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    dtype = np.float64 if precision == 64 else np.float32
    topo = spec.topology
    topo_param = topo.groups if topo.kind == "group" else (
        topo.width if topo.kind == "band" else 0
    )
    n_out = 0 if w_out is None else w_out.shape[0]
    payload = [struct.pack(
        "<BBBBIIIIIB",
        precision,
        _CELL_CODES[spec.kind],
        _GATING_CODES[spec.gating],
        _TOPO_CODES[topo.kind],
        topo_param,
        spec.n_hidden,
        spec.n_input,
        1,
        n_out,
        _ACT_CODES[spec.activation],
    )]
    payload.append(struct.pack("<B", len(spec.gates)))
    payload.append("".join(spec.gates).encode("ascii"))
    arrays = _collect_arrays(spec, cell, w_out, b_out)
    payload.append(struct.pack("<H", len(arrays)))
    for name, arr in arrays:
        payload.append(_pack_array(name, arr, dtype))
    body = b"".join(payload)
    return MAGIC + struct.pack("<B", VERSION) + body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data):
    """Deserialize; returns (spec, cell, w_out, b_out, precision)."""
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not an SSRN checkpoint")
    version = data[4]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body, (stored_crc,) = data[5:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")

    r = _Reader(body)
    (precision, cell_code, gating_code, topo_code, topo_param,
     n_hidden, n_input, _layers, n_out, act_code) = r.unpack("<BBBBIIIIIB")
    (n_gates,) = r.unpack("<B")
    gates = tuple(r.take(n_gates).decode("ascii"))

    kind = _CELL_NAMES[cell_code]
    if gates != GATE_ORDER[kind]:
        raise CheckpointError(f"gate manifest {gates} does not match cell kind {kind}")
    topo_kind = _TOPO_NAMES[topo_code]
    if topo_kind == "group":
        topology = Topology.group(topo_param)
    elif topo_kind == "band":
        topology = Topology.band(topo_param)
    else:
        topology = Topology(topo_kind)
    spec = CellSpec(
        kind=kind, topology=topology, n_hidden=n_hidden, n_input=n_input,
        gating=_GATING_NAMES[gating_code], activation=_ACT_NAMES[act_code],
    )

    (n_arrays,) = r.unpack("<H")
    arrays = {}
    itemsize = precision // 8
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack("<" + "I" * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * itemsize)
        arrays[name] = np.frombuffer(raw, dtype=f"<f{itemsize}").reshape(shape).copy()

    w_in = {k: arrays[f"w_in/{k}"] for k in spec.input_keys}
    w_rec = {
        g: StructuredMatrix(topology, n_hidden, arrays[f"w_rec/{g}"])
        for g in spec.gates
    }
    bias = {g: arrays[f"bias/{g}"] for g in spec.gates}
    cell = CellParams(w_in=w_in, w_rec=w_rec, bias=bias)
    w_out = arrays.get("w_out")
    b_out = arrays.get("b_out")
    return spec, cell, w_out, b_out, precision


def save(path, spec, cell, w_out=None, b_out=None, precision=64):
    data = dumps(spec, cell, w_out, b_out, precision)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
