"""Linear-sketch primitives over dynamic streams.

Everything here is a linear function of the underlying frequency vector:
updates commute, insert/delete cancel exactly, and sketches with equal seeds
merge by cellwise addition.  Distinct sampling follows the standard recipe of
nested dyadic subsampling with verified 1-sparse recovery cells; the sampled
index is the support element with the minimum membership value, which is
uniform over the support conditioned on success.

The data-field and two-level samplers reuse the same machinery by stacking
extra integers into one wide "multiplicity" per index (balanced base-2^w
digits), so a row of a matrix can carry the memory of a whole column sampler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import prf

# 1-sparse verification: random-evaluation checksum over a large prime field.
CHECK_PRIME = (1 << 127) - 1


class SketchError(Exception):
    pass


class OverflowRejected(SketchError):
    """A stacked slot exceeded its configured width."""


# ---------------------------------------------------------------------------
# Balanced digit stacking


def stack_ints(values: Sequence[int], widths: Sequence[int]) -> int:
    """Pack signed ints into one integer, |values[i]| < 2^(widths[i]-1).

    The packing is additive: stack(a) + stack(b) == stack(a + b) as long as
    every slot of the sum stays within its width.
    """
    acc = 0
    shift = 0
    for v, w in zip(values, widths):
        if not (-(1 << (w - 1)) < v < (1 << (w - 1))):
            raise OverflowRejected(f"slot value {v} exceeds width {w}")
        acc += v << shift
        shift += w
    return acc


def unstack_ints(acc: int, widths: Sequence[int]) -> list[int]:
    out = []
    for w in widths:
        low = acc & ((1 << w) - 1)
        if low >= 1 << (w - 1):
            low -= 1 << w
        out.append(low)
        acc = (acc - low) >> w
    if acc != 0:
        raise SketchError("residue after unstacking; widths do not match the payload")
    return out


# ---------------------------------------------------------------------------
# Index hashing helpers (indices may be arbitrarily large nonnegative ints)


def _int_chunks_key(x: int, seed: int) -> int:
    h = prf.mix64(seed)
    if x == 0:
        return prf.mix64(h ^ 0x5555555555555555)
    while x > 0:
        h = prf.mix64(h ^ (x & ((1 << 64) - 1)))
        x >>= 64
    return h


def _membership64(x: int, seed: int) -> int:
    return _int_chunks_key(x, prf.mix64(seed ^ 0xA5A5))


def _max_level(x: int, seed: int) -> int:
    u = _membership64(x, seed)
    return min(64 - u.bit_length(), 63)


def _cell_of(x: int, seed: int, level: int, k: int) -> int:
    return _int_chunks_key(x, prf.fold(seed, 0xCE11, level)) % k


def _check_base(seed: int) -> int:
    return 2 + _int_chunks_key(1, prf.fold(seed, 0xC4EC)) % (CHECK_PRIME - 3)


def _check_term(x: int, base: int, seed: int) -> int:
    return pow(base, _int_chunks_key(x, prf.fold(seed, 0x7E57)), CHECK_PRIME)


# ---------------------------------------------------------------------------
# 1-sparse recovery cell


class OneSparseCell:
    """Maintains (sum, index-weighted sum, checksum) for exact 1-sparse recovery.

    The checksum is kept unreduced so cell state stays a plain integer sum and
    stacking into wider payloads remains additive; verification reduces mod p.
    """

    __slots__ = ("s0", "s1", "s2")

    def __init__(self, s0: int = 0, s1: int = 0, s2: int = 0):
        self.s0 = s0
        self.s1 = s1
        self.s2 = s2

    def update(self, x: int, delta: int, base: int, seed: int) -> None:
        self.s0 += delta
        self.s1 += delta * x
        self.s2 += delta * _check_term(x, base, seed)

    def is_zero(self) -> bool:
        return self.s0 == 0 and self.s1 == 0 and self.s2 == 0

    def recover(self, base: int, seed: int):
        """Return (index, value) if verifiably 1-sparse, None if empty, raise on failure."""
        if self.is_zero():
            return None
        if self.s0 == 0 or self.s1 % self.s0 != 0:
            raise SketchError("cell not 1-sparse")
        x = self.s1 // self.s0
        if x < 0:
            raise SketchError("cell not 1-sparse")
        if (self.s2 - self.s0 * _check_term(x, base, seed)) % CHECK_PRIME != 0:
            raise SketchError("cell checksum mismatch")
        return x, self.s0


# ---------------------------------------------------------------------------
# Core distinct sampler


@dataclass(frozen=True)
class L0Params:
    universe_log: int  # log2 of the configured support bound
    cells: int = 8
    reps: int = 8

    @property
    def levels(self) -> int:
        return self.universe_log + 2


class QueryEmpty(Exception):
    """The sketched vector is zero."""


class QueryFailed(SketchError):
    """Recovery failed; the caller may retry with an independent repetition."""


class L0Sketch:
    """Distinct sampler over integer indices with integer (possibly stacked) values.

    query() returns (index, value) where index is uniform over the nonzero
    support conditioned on success; failures and emptiness are reported
    explicitly, never as a silently wrong index.
    """

    KIND = "l0"

    def __init__(self, params: L0Params, seed: int):
        self.params = params
        self.seed = seed
        self._rep_seeds = [prf.fold(seed, 0x5EED, r) for r in range(params.reps)]
        self._bases = [_check_base(s) for s in self._rep_seeds]
        self.cells = [
            [[OneSparseCell() for _ in range(params.cells)] for _ in range(params.levels)]
            for _ in range(params.reps)
        ]

    def update(self, index: int, delta: int) -> None:
        if delta == 0:
            return
        if index < 0:
            raise ValueError("indices must be nonnegative")
        for r, rs in enumerate(self._rep_seeds):
            top = min(_max_level(index, rs), self.params.levels - 1)
            base = self._bases[r]
            for lvl in range(top + 1):
                c = _cell_of(index, rs, lvl, self.params.cells)
                self.cells[r][lvl][c].update(index, delta, base, rs)

    def _query_rep(self, r: int):
        rs = self._rep_seeds[r]
        base = self._bases[r]
        deepest = -1
        for lvl in range(self.params.levels - 1, -1, -1):
            if any(not c.is_zero() for c in self.cells[r][lvl]):
                deepest = lvl
                break
        if deepest < 0:
            raise QueryEmpty
        recovered = []
        for cell in self.cells[r][deepest]:
            got = cell.recover(base, rs)  # raises SketchError on collision
            if got is not None:
                recovered.append(got)
        if not recovered:
            raise QueryFailed("nonzero level recovered nothing")
        # Survivors of the deepest nonempty level include the global minimum
        # membership value; picking it yields a uniform support element.
        best = min(recovered, key=lambda iv: (_membership64(iv[0], rs), iv[0]))
        if _max_level(best[0], rs) < deepest:
            raise QueryFailed("recovered index inconsistent with its level")
        return best

    def query(self):
        empties = 0
        for r in range(self.params.reps):
            try:
                return self._query_rep(r)
            except QueryEmpty:
                empties += 1
            except SketchError:
                continue
        if empties == self.params.reps:
            raise QueryEmpty
        raise QueryFailed("all repetitions failed")

    def is_empty_state(self) -> bool:
        return all(
            c.is_zero() for rep in self.cells for lvl in rep for c in lvl
        )

    def merge(self, other: "L0Sketch") -> None:
        if self.params != other.params or self.seed != other.seed:
            raise SketchError("can only merge sketches with identical params and seed")
        for r in range(self.params.reps):
            for lvl in range(self.params.levels):
                for c, oc in zip(self.cells[r][lvl], other.cells[r][lvl]):
                    c.s0 += oc.s0
                    c.s1 += oc.s1
                    c.s2 += oc.s2

    # -- serialization ------------------------------------------------------

    def state_vector(self) -> list[int]:
        """Flat integer image of the memory; all-zero iff the sketch is empty."""
        out: list[int] = []
        for rep in self.cells:
            for lvl in rep:
                for c in lvl:
                    out.extend((c.s0, c.s1, c.s2))
        return out

    def load_state_vector(self, vec: Sequence[int]) -> None:
        it = iter(vec)
        for rep in self.cells:
            for lvl in rep:
                for c in lvl:
                    c.s0 = next(it)
                    c.s1 = next(it)
                    c.s2 = next(it)

    def to_bytes(self) -> bytes:
        return _serialize(
            self.KIND,
            {"universe_log": self.params.universe_log, "cells": self.params.cells,
             "reps": self.params.reps, "seed": self.seed},
            self.state_vector(),
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "L0Sketch":
        kind, header, vec = _deserialize(blob)
        if kind != cls.KIND:
            raise SketchError(f"expected kind {cls.KIND}, got {kind}")
        sk = cls(
            L0Params(header["universe_log"], header["cells"], header["reps"]),
            header["seed"],
        )
        sk.load_state_vector(vec)
        return sk

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, L0Sketch)
            and self.params == other.params
            and self.seed == other.seed
            and self.state_vector() == other.state_vector()
        )


# ---------------------------------------------------------------------------
# Data-field variant


class L0WithData:
    """Distinct sampler where each index carries a fixed-width vector of counters.

    An index is present iff its frequency or any counter is nonzero; queries
    return the index uniformly among present ones with both retrieved exactly.
    """

    KIND = "l0data"

    def __init__(self, params: L0Params, n_fields: int, seed: int, field_width: int = 64):
        self.n_fields = n_fields
        self.field_width = field_width
        self.widths = [64] + [field_width] * n_fields
        self.inner = L0Sketch(params, seed)

    def update(self, index: int, dfreq: int, ddata: Sequence[int] | None = None) -> None:
        data = list(ddata) if ddata is not None else [0] * self.n_fields
        if len(data) != self.n_fields:
            raise ValueError("data field count mismatch")
        if dfreq == 0 and not any(data):
            return
        self.inner.update(index, stack_ints([dfreq] + data, self.widths))

    def query(self):
        index, payload = self.inner.query()
        vals = unstack_ints(payload, self.widths)
        return index, vals[0], vals[1:]

    def merge(self, other: "L0WithData") -> None:
        self.inner.merge(other.inner)

    def is_empty_state(self) -> bool:
        return self.inner.is_empty_state()

    def to_bytes(self) -> bytes:
        return _serialize(
            self.KIND,
            {"universe_log": self.inner.params.universe_log,
             "cells": self.inner.params.cells, "reps": self.inner.params.reps,
             "seed": self.inner.seed, "n_fields": self.n_fields,
             "field_width": self.field_width},
            self.inner.state_vector(),
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "L0WithData":
        kind, header, vec = _deserialize(blob)
        if kind != cls.KIND:
            raise SketchError(f"expected kind {cls.KIND}, got {kind}")
        sk = cls(
            L0Params(header["universe_log"], header["cells"], header["reps"]),
            header["n_fields"], header["seed"], header["field_width"],
        )
        sk.inner.load_state_vector(vec)
        return sk


# ---------------------------------------------------------------------------
# Two-level sampler (uniform nonzero row, then uniform nonzero column in it)


class TwoLevelL0:
    """Samples (row, column, row_sum) from a sparse integer matrix stream.

    The row sampler's per-row multiplicity stacks the true row sum together
    with the memory vector of a column sampler for that row; all column
    samplers share one seed, so entry updates translate to additive row
    updates and the whole structure stays linear.
    """

    KIND = "l0two"

    def __init__(
        self,
        row_params: L0Params,
        col_params: L0Params,
        col_index_bits: int,
        seed: int,
        count_width: int = 64,
    ):
        self.row_params = row_params
        self.col_params = col_params
        self.col_index_bits = col_index_bits
        self.count_width = count_width
        self.seed = seed
        self.col_seed = prf.fold(seed, 0xC07)
        n_cells = col_params.reps * col_params.levels * col_params.cells
        # Per column cell: s0 (counts), s1 (count*index), s2 (unreduced checksum).
        cell_widths = [count_width, col_index_bits + count_width, 200]
        self.widths = [count_width] + cell_widths * n_cells
        self.rows = L0Sketch(row_params, prf.fold(seed, 0x120))
        self._col_proto = L0Sketch(col_params, self.col_seed)

    def _col_delta_vector(self, col: int, delta: int) -> list[int]:
        sk = L0Sketch(self.col_params, self.col_seed)
        sk.update(col, delta)
        return sk.state_vector()

    def update(self, row: int, col: int, delta: int) -> None:
        if delta == 0:
            return
        vec = [delta] + self._col_delta_vector(col, delta)
        self.rows.update(row, stack_ints(vec, self.widths))

    def query(self):
        row, payload = self.rows.query()
        vals = unstack_ints(payload, self.widths)
        row_sum = vals[0]
        col_sketch = L0Sketch(self.col_params, self.col_seed)
        col_sketch.load_state_vector(vals[1:])
        col, mult = col_sketch.query()
        return row, col, row_sum

    def merge(self, other: "TwoLevelL0") -> None:
        if (
            self.row_params != other.row_params
            or self.col_params != other.col_params
            or self.seed != other.seed
        ):
            raise SketchError("two-level merge requires identical params and seed")
        self.rows.merge(other.rows)

    def is_empty_state(self) -> bool:
        return self.rows.is_empty_state()

    def to_bytes(self) -> bytes:
        return _serialize(
            self.KIND,
            {"row": [self.row_params.universe_log, self.row_params.cells, self.row_params.reps],
             "col": [self.col_params.universe_log, self.col_params.cells, self.col_params.reps],
             "col_index_bits": self.col_index_bits, "seed": self.seed,
             "count_width": self.count_width},
            self.rows.state_vector(),
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TwoLevelL0":
        kind, header, vec = _deserialize(blob)
        if kind != cls.KIND:
            raise SketchError(f"expected kind {cls.KIND}, got {kind}")
        sk = cls(
            L0Params(*header["row"]), L0Params(*header["col"]),
            header["col_index_bits"], header["seed"], header["count_width"],
        )
        sk.rows.load_state_vector(vec)
        return sk


# ---------------------------------------------------------------------------
# Subsampling handle


@dataclass(frozen=True)
class SubsampleFn:
    """Deterministic rate-2^-level membership for grid points."""

    level: int
    seed: int

    @property
    def rate(self) -> float:
        return 2.0 ** -self.level

    def member(self, point: Sequence[int]) -> bool:
        key = prf.scalar_point_key(tuple(point))
        if self.level <= 0:
            return True
        if self.level >= 64:
            return False
        return prf.mix64(key ^ prf.mix64(self.seed)) < (1 << (64 - self.level))

    def member_batch(self, points: np.ndarray) -> np.ndarray:
        keys = prf.point_keys(points)
        return prf.subsample_mask(keys, self.seed, self.level)


# ---------------------------------------------------------------------------
# K-sparse recovery (peeling decoder over verified cells)


class SparseRecovery:
    """Recovers the full support exactly whenever it has at most ~capacity items."""

    KIND = "sparse"

    def __init__(self, capacity: int, seed: int, rows: int = 3):
        self.capacity = capacity
        self.seed = seed
        self.n_rows = rows
        self.n_cells = max(8, 2 * capacity)
        self._row_seeds = [prf.fold(seed, 0x9A, r) for r in range(rows)]
        self._bases = [_check_base(s) for s in self._row_seeds]
        self.cells = [
            [OneSparseCell() for _ in range(self.n_cells)] for _ in range(rows)
        ]

    def _cell_idx(self, x: int, r: int) -> int:
        return _int_chunks_key(x, self._row_seeds[r]) % self.n_cells

    def update(self, index: int, delta: int) -> None:
        if delta == 0:
            return
        for r in range(self.n_rows):
            self.cells[r][self._cell_idx(index, r)].update(
                index, delta, self._bases[r], self._row_seeds[r]
            )

    def merge(self, other: "SparseRecovery") -> None:
        if self.capacity != other.capacity or self.seed != other.seed:
            raise SketchError("sparse recovery merge requires identical params")
        for r in range(self.n_rows):
            for c, oc in zip(self.cells[r], other.cells[r]):
                c.s0 += oc.s0
                c.s1 += oc.s1
                c.s2 += oc.s2

    def decode(self) -> dict[int, int] | None:
        """Full (index -> value) support, or None when recovery fails."""
        work = [
            [OneSparseCell(c.s0, c.s1, c.s2) for c in row] for row in self.cells
        ]
        out: dict[int, int] = {}
        queue = [(r, j) for r in range(self.n_rows) for j in range(self.n_cells)]
        progress = True
        while progress:
            progress = False
            next_queue = []
            for r, j in queue:
                cell = work[r][j]
                if cell.is_zero():
                    continue
                try:
                    got = cell.recover(self._bases[r], self._row_seeds[r])
                except SketchError:
                    next_queue.append((r, j))
                    continue
                if got is None:
                    continue
                x, v = got
                out[x] = out.get(x, 0) + v
                for rr in range(self.n_rows):
                    work[rr][self._cell_idx(x, rr)].update(
                        x, -v, self._bases[rr], self._row_seeds[rr]
                    )
                progress = True
            queue = next_queue
        if any(not c.is_zero() for row in work for c in row):
            return None
        return {x: v for x, v in out.items() if v != 0}

    def state_vector(self) -> list[int]:
        out: list[int] = []
        for row in self.cells:
            for c in row:
                out.extend((c.s0, c.s1, c.s2))
        return out

    def to_bytes(self) -> bytes:
        return _serialize(
            self.KIND,
            {"capacity": self.capacity, "seed": self.seed, "rows": self.n_rows},
            self.state_vector(),
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SparseRecovery":
        kind, header, vec = _deserialize(blob)
        if kind != cls.KIND:
            raise SketchError(f"expected kind {cls.KIND}, got {kind}")
        sk = cls(header["capacity"], header["seed"], header["rows"])
        it = iter(vec)
        for row in sk.cells:
            for c in row:
                c.s0 = next(it)
                c.s1 = next(it)
                c.s2 = next(it)
        return sk


# ---------------------------------------------------------------------------
# Turnstile distinct counting


class DistinctCounter:
    """Support-size estimator for dynamic streams.

    Small supports (up to the exact capacity) are recovered exactly through a
    sparse-recovery sketch; larger ones fall back to occupancy inversion on
    nested subsampling levels, giving a (1 +- 0.5)-estimate w.h.p.
    """

    KIND = "distinct"

    def __init__(self, seed: int, levels: int = 24, counters: int = 256,
                 exact_capacity: int = 64):
        self.seed = seed
        self.n_levels = levels
        self.n_counters = counters
        self.exact = SparseRecovery(exact_capacity, prf.fold(seed, 0xE7))
        self._lvl_seed = prf.fold(seed, 0x0CC)
        self.table = np.zeros((levels, counters), dtype=np.int64)

    def update(self, index: int, delta: int) -> None:
        if delta == 0:
            return
        self.exact.update(index, delta)
        top = min(_max_level(index, self._lvl_seed), self.n_levels - 1)
        j = _int_chunks_key(index, prf.fold(self._lvl_seed, 0xB1)) % self.n_counters
        sign = 1 if _int_chunks_key(index, prf.fold(self._lvl_seed, 0x51)) & 1 else -1
        self.table[: top + 1, j] += sign * delta

    def merge(self, other: "DistinctCounter") -> None:
        if self.seed != other.seed or self.table.shape != other.table.shape:
            raise SketchError("distinct counter merge requires identical params")
        self.exact.merge(other.exact)
        self.table += other.table

    def estimate(self) -> float:
        decoded = self.exact.decode()
        if decoded is not None:
            return float(len(decoded))
        c = self.n_counters
        for lvl in range(self.n_levels):
            occ = int(np.count_nonzero(self.table[lvl]))
            if occ == 0:
                return 0.0
            if occ <= 0.3 * c:
                s_here = np.log1p(-occ / c) / np.log1p(-1.0 / c)
                return float(2**lvl) * float(s_here)
        return float(2**self.n_levels)  # all levels saturated

    def to_bytes(self) -> bytes:
        vec = self.exact.state_vector() + [int(v) for v in self.table.reshape(-1)]
        return _serialize(
            self.KIND,
            {"seed": self.seed, "levels": self.n_levels, "counters": self.n_counters,
             "exact_capacity": self.exact.capacity},
            vec,
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DistinctCounter":
        kind, header, vec = _deserialize(blob)
        if kind != cls.KIND:
            raise SketchError(f"expected kind {cls.KIND}, got {kind}")
        dc = cls(header["seed"], header["levels"], header["counters"],
                 header["exact_capacity"])
        n_exact = dc.exact.n_rows * dc.exact.n_cells * 3
        it = iter(vec[:n_exact])
        for row in dc.exact.cells:
            for c in row:
                c.s0 = next(it)
                c.s1 = next(it)
                c.s2 = next(it)
        dc.table = np.array(vec[n_exact:], dtype=np.int64).reshape(
            dc.n_levels, dc.n_counters
        )
        return dc


# ---------------------------------------------------------------------------
# Exact small-range counterparts (same interfaces, dictionary state)


class ExactL0:
    """Dictionary-backed stand-in for L0Sketch used in the exact backend."""

    def __init__(self, seed: int):
        self.seed = seed
        self.state: dict[int, int] = {}

    def update(self, index: int, delta: int) -> None:
        if delta == 0:
            return
        v = self.state.get(index, 0) + delta
        if v == 0:
            self.state.pop(index, None)
        else:
            self.state[index] = v

    def query(self):
        if not self.state:
            raise QueryEmpty
        items = sorted(self.state)
        pick = min(items, key=lambda x: (_membership64(x, self.seed), x))
        return pick, self.state[pick]

    def merge(self, other: "ExactL0") -> None:
        for k, v in other.state.items():
            self.update(k, v)


class ExactTwoLevel:
    """Dictionary-backed two-level sampler with the same output law."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rows: dict[int, dict[int, int]] = {}

    def update(self, row: int, col: int, delta: int) -> None:
        if delta == 0:
            return
        cols = self.rows.setdefault(row, {})
        v = cols.get(col, 0) + delta
        if v == 0:
            cols.pop(col, None)
            if not cols:
                self.rows.pop(row, None)
        else:
            cols[col] = v

    def query(self):
        if not self.rows:
            raise QueryEmpty
        row_seed = prf.fold(self.seed, 0x120)
        col_seed = prf.fold(self.seed, 0xC07)
        row = min(self.rows, key=lambda r: (_membership64(r, row_seed), r))
        cols = self.rows[row]
        col = min(cols, key=lambda c: (_membership64(c, col_seed), c))
        return row, col, sum(cols.values())


# ---------------------------------------------------------------------------
# Binary serialization shared by all sketch kinds


_MAGIC = b"UFLSK1"


def _encode_int(v: int) -> bytes:
    sign = 1 if v < 0 else 0
    mag = abs(v)
    body = mag.to_bytes((mag.bit_length() + 7) // 8 or 1, "little")
    return len(body).to_bytes(4, "little") + bytes([sign]) + body


def _decode_int(buf: bytes, pos: int) -> tuple[int, int]:
    n = int.from_bytes(buf[pos : pos + 4], "little")
    sign = buf[pos + 4]
    mag = int.from_bytes(buf[pos + 5 : pos + 5 + n], "little")
    return (-mag if sign else mag), pos + 5 + n


def _serialize(kind: str, header: dict, vec: Iterable[int]) -> bytes:
    head = json.dumps({"kind": kind, **header}, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, len(head).to_bytes(4, "little"), head]
    vec = list(vec)
    parts.append(len(vec).to_bytes(4, "little"))
    for v in vec:
        parts.append(_encode_int(int(v)))
    return b"".join(parts)


def _deserialize(blob: bytes) -> tuple[str, dict, list[int]]:
    if blob[: len(_MAGIC)] != _MAGIC:
        raise SketchError("bad magic; not a sketch blob")
    pos = len(_MAGIC)
    hlen = int.from_bytes(blob[pos : pos + 4], "little")
    pos += 4
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    n = int.from_bytes(blob[pos : pos + 4], "little")
    pos += 4
    vec = []
    for _ in range(n):
        v, pos = _decode_int(blob, pos)
        vec.append(v)
    kind = header.pop("kind")
    return kind, header, vec
