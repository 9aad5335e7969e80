"""Recurrent connectivity structures and their compact kernels.

Four hidden-to-hidden layouts are supported:

* full      -- ordinary dense n x n matrix
* group     -- G independent fully-connected groups (block-diagonal)
* band      -- each neuron connects to itself and (C-1)/2 neighbours on
               either side, clipped at the matrix edges (no wraparound)
* diagonal  -- self-connections only; the matrix is just a vector

Compact storage per layout:

* full:     (n, n) dense array
* group:    (G, m, m) block stack, m = n // G
* band:     (n, C) row-banded array; row i holds columns i-k .. i+k with
            k = (C-1)//2, out-of-range slots stored as explicit zeros
* diagonal: (n,) vector

All kernels are pure functions over immutable storage. `matvec` supports
a partitioned execution mode: the output rows (or groups) are split into
`partitions` disjoint chunks that can be computed sequentially or on a
thread pool; because chunks never share output slots, the two schedules
are bit-identical.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linalg import DTYPE, ShapeError, dense_matvec, init_uniform

FULL = "full"
GROUP = "group"
BAND = "band"
DIAGONAL = "diagonal"

TOPOLOGY_KINDS = (FULL, GROUP, BAND, DIAGONAL)

GATE_MULTIPLIER = {"rnn": 1, "gru": 3, "lstm": 4}


class TopologyError(ValueError):
    """Invalid topology parameters (even band width, non-dividing group count, ...)."""


@dataclass(frozen=True)
class Topology:
    """Which hidden-to-hidden connectivity a layer uses."""

    kind: str
    groups: int = 1   # G, group only
    width: int = 1    # C, band only

    @staticmethod
    def full():
        return Topology(FULL)

    @staticmethod
    def group(g):
        return Topology(GROUP, groups=g)

    @staticmethod
    def band(c):
        return Topology(BAND, width=c)

    @staticmethod
    def diagonal():
        return Topology(DIAGONAL)

    def validate(self, n):
        if self.kind not in TOPOLOGY_KINDS:
            raise TopologyError(f"unknown topology kind {self.kind!r}")
        if n < 1:
            raise TopologyError(f"hidden size must be >= 1, got {n}")
        if self.kind == GROUP:
            if self.groups < 1:
                raise TopologyError(f"group count must be >= 1, got {self.groups}")
            if n % self.groups != 0:
                raise TopologyError(
                    f"group count {self.groups} must divide hidden size {n}"
                )
        if self.kind == BAND:
            if self.width % 2 == 0:
                raise TopologyError(
                    f"band width must be odd (self + equal neighbours each side), got {self.width}"
                )
            # 2n-1 covers every column from every row; beyond that the extra
            # slots could never be live
            if not 1 <= self.width <= 2 * n - 1:
                raise TopologyError(
                    f"band width must be in [1, {2 * n - 1}] for n={n}, got {self.width}"
                )

    def describe(self):
        if self.kind == GROUP:
            return f"group(G={self.groups})"
        if self.kind == BAND:
            return f"band(C={self.width})"
        return self.kind


def count_recurrent_weights(cell_kind, topology, n):
    """Hidden-to-hidden weight count for one layer of n neurons.

    full: n^2, group: n^2/G, band: n*C, diagonal: n -- times the number of
    gates in the cell (1 for vanilla RNN, 3 for GRU, 4 for LSTM). The band
    count is the storage count n*C: clipped edge slots are included here
    (they are allocated and moved through the kernel); the strictly
    trainable count is StructuredMatrix.live_weight_count().
    """
    topology.validate(n)
    if cell_kind not in GATE_MULTIPLIER:
        raise ValueError(f"unknown cell kind {cell_kind!r}")
    gates = GATE_MULTIPLIER[cell_kind]
    if topology.kind == FULL:
        per_gate = n * n
    elif topology.kind == GROUP:
        per_gate = n * n // topology.groups
    elif topology.kind == BAND:
        per_gate = n * topology.width
    else:
        per_gate = n
    return gates * per_gate


def flop_count(topology, n):
    """Multiply-add count of one structured matvec (clipped band slots included:
    the band kernel does not branch per row)."""
    topology.validate(n)
    if topology.kind == FULL:
        return n * n
    if topology.kind == GROUP:
        return n * n // topology.groups
    if topology.kind == BAND:
        return n * topology.width
    return n


def band_live_mask(n, c):
    """(n, C) boolean mask of band slots that map to real matrix columns."""
    k = (c - 1) // 2
    cols = np.arange(n)[:, None] + np.arange(c)[None, :] - k
    return (cols >= 0) & (cols < n)


class StructuredMatrix:
    """A recurrent weight matrix stored compactly according to its topology."""

    def __init__(self, topology, n, data):
        topology.validate(n)
        data = np.asarray(data)
        expected = self._storage_shape(topology, n)
        if data.shape != expected:
            raise ShapeError(
                f"storage shape {data.shape} does not match {topology.describe()} "
                f"n={n} (expected {expected})"
            )
        if topology.kind == BAND:
            dead = ~band_live_mask(n, topology.width)
            if np.any(data[dead] != 0):
                raise ValueError("clipped band slots must be stored as zeros")
        self.topology = topology
        self.n = n
        self.data = data

    @staticmethod
    def _storage_shape(topology, n):
        if topology.kind == FULL:
            return (n, n)
        if topology.kind == GROUP:
            m = n // topology.groups
            return (topology.groups, m, m)
        if topology.kind == BAND:
            return (n, topology.width)
        return (n,)

    @classmethod
    def zeros(cls, topology, n, dtype=DTYPE):
        return cls(topology, n, np.zeros(cls._storage_shape(topology, n), dtype=dtype))

    @classmethod
    def random(cls, topology, n, rng, scale):
        data = init_uniform(rng, cls._storage_shape(topology, n), scale)
        if topology.kind == BAND:
            data = data * band_live_mask(n, topology.width)
        return cls(topology, n, data)

    @classmethod
    def from_dense(cls, dense, topology, strict=True):
        """Extract the topology-permitted entries of a dense n x n matrix.

        In strict mode any nonzero entry outside the structure is an error.
        """
        dense = np.asarray(dense)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {dense.shape}")
        n = dense.shape[0]
        topology.validate(n)
        if topology.kind == FULL:
            return cls(topology, n, dense.copy())
        if topology.kind == GROUP:
            g = topology.groups
            m = n // g
            blocks = np.stack(
                [dense[i * m : (i + 1) * m, i * m : (i + 1) * m] for i in range(g)]
            )
            if strict:
                rebuilt = np.zeros_like(dense)
                for i in range(g):
                    rebuilt[i * m : (i + 1) * m, i * m : (i + 1) * m] = blocks[i]
                if np.any((dense != 0) & (rebuilt != dense)):
                    raise ValueError("nonzero entry outside the block-diagonal structure")
            return cls(topology, n, blocks)
        if topology.kind == BAND:
            c = topology.width
            k = (c - 1) // 2
            data = np.zeros((n, c), dtype=dense.dtype)
            mask = band_live_mask(n, c)
            rows = np.broadcast_to(np.arange(n)[:, None], mask.shape)
            cols = rows + np.arange(c)[None, :] - k
            data[mask] = dense[rows[mask], cols[mask]]
            if strict:
                off = dense.copy()
                off[rows[mask], cols[mask]] = 0
                if np.any(off != 0):
                    raise ValueError("nonzero entry outside the band structure")
            return cls(topology, n, data)
        # diagonal
        diag = np.diagonal(dense).copy()
        if strict:
            off = dense.copy()
            np.fill_diagonal(off, 0)
            if np.any(off != 0):
                raise ValueError("nonzero entry off the diagonal")
        return cls(topology, n, diag)

    def to_dense(self):
        """Expand to the equivalent n x n dense matrix (forbidden slots exactly 0)."""
        n = self.n
        kind = self.topology.kind
        if kind == FULL:
            return self.data.copy()
        out = np.zeros((n, n), dtype=self.data.dtype)
        if kind == GROUP:
            m = n // self.topology.groups
            for i in range(self.topology.groups):
                out[i * m : (i + 1) * m, i * m : (i + 1) * m] = self.data[i]
        elif kind == BAND:
            c = self.topology.width
            k = (c - 1) // 2
            mask = band_live_mask(n, c)
            rows = np.broadcast_to(np.arange(n)[:, None], mask.shape)
            cols = rows + np.arange(c)[None, :] - k
            out[rows[mask], cols[mask]] = self.data[mask]
        else:
            np.fill_diagonal(out, self.data)
        return out

    def live_mask(self):
        """Boolean mask over the compact storage marking trainable slots."""
        if self.topology.kind == BAND:
            return band_live_mask(self.n, self.topology.width)
        return np.ones_like(self.data, dtype=bool)

    def live_weight_count(self):
        return int(self.live_mask().sum())

    def matvec(self, h, partitions=1, pool=None):
        """Structured W @ h; equals dense_matvec(self.to_dense(), h).

        `h` is (n,) or (B, n). `partitions` splits the output rows into that
        many chunks; with a `pool` (ThreadPoolExecutor) chunks run
        concurrently, otherwise in order. Chunk arithmetic is independent,
        so results are bit-identical across schedules.
        """
        h = np.asarray(h)
        if h.shape[-1] != self.n:
            raise ShapeError(
                f"matvec dimension mismatch: matrix size {self.n} vs vector len {h.shape[-1]}"
            )
        kind = self.topology.kind
        batched = h.ndim == 2
        hb = h if batched else h[None, :]
        out = np.empty_like(hb)

        if kind == BAND:
            c = self.topology.width
            k = (c - 1) // 2
            hpad = np.pad(hb, ((0, 0), (k, k)))
            windows = sliding_window_view(hpad, c, axis=1)  # (B, n, C)
        elif kind == GROUP:
            g = self.topology.groups
            m = self.n // g
            hg = hb.reshape(hb.shape[0], g, m)
            outg = out.reshape(out.shape[0], g, m)

        def run_chunk(lo, hi):
            if kind == FULL:
                out[:, lo:hi] = hb @ self.data[lo:hi].T
            elif kind == DIAGONAL:
                np.multiply(hb[:, lo:hi], self.data[lo:hi], out=out[:, lo:hi])
            elif kind == BAND:
                np.einsum(
                    "bnc,nc->bn", windows[:, lo:hi], self.data[lo:hi], out=out[:, lo:hi]
                )
            else:  # group: chunk over groups, not rows
                for gi in range(lo, hi):
                    outg[:, gi] = hg[:, gi] @ self.data[gi].T

        total = self.topology.groups if kind == GROUP else self.n
        bounds = _chunk_bounds(total, partitions)
        if pool is None:
            for lo, hi in bounds:
                run_chunk(lo, hi)
        else:
            list(pool.map(lambda b: run_chunk(*b), bounds))
        return out if batched else out[0]

    def matvec_backward(self, h, grad_out):
        """Reverse-mode of matvec: returns (d_h, d_storage).

        `h` and `grad_out` are (B, n). d_storage has the compact layout of
        `self.data`; structurally-zero band slots receive exactly zero.
        """
        h = np.atleast_2d(np.asarray(h))
        g = np.atleast_2d(np.asarray(grad_out))
        kind = self.topology.kind
        if kind == FULL:
            return g @ self.data, g.T @ h
        if kind == DIAGONAL:
            return g * self.data, np.einsum("bn,bn->n", g, h)
        if kind == GROUP:
            gg = self.topology.groups
            m = self.n // gg
            hg = h.reshape(h.shape[0], gg, m)
            gb = g.reshape(g.shape[0], gg, m)
            dh = np.einsum("gij,bgi->bgj", self.data, gb).reshape(h.shape)
            dw = np.einsum("bgi,bgj->gij", gb, hg)
            return dh, dw
        # band
        c = self.topology.width
        k = (c - 1) // 2
        hpad = np.pad(h, ((0, 0), (k, k)))
        windows = sliding_window_view(hpad, c, axis=1)
        dw = np.einsum("bn,bnc->nc", g, windows)
        dhpad = np.zeros_like(hpad)
        for ci in range(c):
            # output row i consumed hpad[:, i + ci]
            dhpad[:, ci : ci + self.n] += self.data[:, ci] * g
        dh = dhpad[:, k : k + self.n]
        return dh, dw

    def __eq__(self, other):
        return (
            isinstance(other, StructuredMatrix)
            and self.topology == other.topology
            and self.n == other.n
            and np.array_equal(self.data, other.data)
        )


def _chunk_bounds(total, partitions):
    if partitions <= 1:
        return [(0, total)]
    partitions = min(partitions, total)
    edges = [total * i // partitions for i in range(partitions + 1)]
    return list(zip(edges[:-1], edges[1:]))


def make_pool(workers):
    return ThreadPoolExecutor(max_workers=workers)


def structured_matvec(w, h, partitions=1, pool=None):
    """Module-level convenience wrapper around StructuredMatrix.matvec."""
    return w.matvec(h, partitions=partitions, pool=pool)


def to_dense(w):
    return w.to_dense()


def from_dense(dense, topology, strict=True):
    return StructuredMatrix.from_dense(dense, topology, strict=strict)
