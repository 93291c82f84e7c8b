"""Domain types, geometry, and stream parsing shared by all other modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GridPoint = tuple  # tuple of ints, one per dimension, each in [1, delta]
RealPoint = tuple  # tuple of floats


class StreamFormatError(ValueError):
    """Malformed stream text; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class StreamUpdate:
    """One stream event: insert (+1) or delete (-1) of a grid point."""

    sign: int
    point: GridPoint

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True)
class UflInstance:
    """Problem parameters: dimension d, grid side delta (a power of two), opening cost f."""

    d: int
    delta: int
    f: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.delta < 2 or (self.delta & (self.delta - 1)) != 0:
            raise ValueError(f"delta must be a power of two >= 2, got {self.delta}")
        if not (self.f > 0):
            raise ValueError(f"opening cost must be positive, got {self.f}")

    @property
    def log2_delta(self) -> int:
        return self.delta.bit_length() - 1

    @property
    def levels(self) -> int:
        """L = d * log2(delta); an upper bound on log2 of any distinct point count."""
        return self.d * self.log2_delta

    def check_point(self, point: Sequence[int]) -> GridPoint:
        if len(point) != self.d:
            raise ValueError(f"point has {len(point)} coordinates, expected {self.d}")
        for c in point:
            if not (1 <= c <= self.delta):
                raise ValueError(f"coordinate {c} outside [1, {self.delta}]")
        return tuple(int(c) for c in point)


@dataclass
class Stream:
    """A materialized update sequence for one instance.

    Points are stored as an (n_updates, d) int64 array with a parallel sign
    vector so that estimators can process them in bulk.
    """

    instance: UflInstance
    signs: np.ndarray  # (n,) int8 in {+1, -1}
    points: np.ndarray  # (n, d) int64

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8).reshape(-1)
        self.points = np.asarray(self.points, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != self.instance.d:
            raise ValueError("points must be (n, d) shaped")
        if self.signs.shape[0] != self.points.shape[0]:
            raise ValueError("signs and points length mismatch")

    def __len__(self) -> int:
        return self.signs.shape[0]

    def __iter__(self) -> Iterable[StreamUpdate]:
        for sign, row in zip(self.signs, self.points):
            yield StreamUpdate(int(sign), tuple(int(c) for c in row))

    @property
    def insertion_count(self) -> int:
        return int(np.count_nonzero(self.signs > 0))

    def live_points(self) -> np.ndarray:
        """Net point set after all updates, as an (m, d) array (validated streams only)."""
        counts: dict[bytes, tuple[int, np.ndarray]] = {}
        for sign, row in zip(self.signs, self.points):
            key = row.tobytes()
            cnt, _ = counts.get(key, (0, row))
            counts[key] = (cnt + int(sign), row)
        rows = [row for cnt, row in counts.values() if cnt != 0]
        if not rows:
            return np.empty((0, self.instance.d), dtype=np.int64)
        return np.stack(rows).astype(np.int64)


@dataclass
class StreamCheck:
    """Result of the distinct-points multiset check."""

    valid: bool
    violation_index: int | None = None  # 1-based index of the first bad update
    message: str = ""


def distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Euclidean distance; raises on dimension mismatch."""
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(p, q)))


def pairwise_sq_dists(points: np.ndarray, queries: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances, (len(queries), len(points)).

    Computed via the Gram expansion; inputs are cast to float64, which is exact
    for grid coordinates (squared sums stay below 2^53 for the supported sizes).
    """
    x = np.asarray(points, dtype=np.float64)
    q = x if queries is None else np.asarray(queries, dtype=np.float64)
    x_sq = np.einsum("ij,ij->i", x, x)
    q_sq = np.einsum("ij,ij->i", q, q)
    d2 = q_sq[:, None] + x_sq[None, :] - 2.0 * (q @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def format_update(update: StreamUpdate) -> str:
    sign = "+" if update.sign > 0 else "-"
    return sign + " " + " ".join(str(int(c)) for c in update.point)


def parse_update(line: str, instance: UflInstance, line_no: int | None = None) -> StreamUpdate:
    """Decode one `+ c1 ... cd` / `- c1 ... cd` line and validate coordinates."""
    parts = line.split()
    if not parts or parts[0] not in ("+", "-"):
        raise StreamFormatError(f"expected '+' or '-' leading token in {line!r}", line_no)
    if len(parts) != instance.d + 1:
        raise StreamFormatError(
            f"expected {instance.d} coordinates, got {len(parts) - 1}", line_no
        )
    try:
        coords = [int(tok) for tok in parts[1:]]
    except ValueError as exc:
        raise StreamFormatError(f"non-integer coordinate in {line!r}", line_no) from exc
    for c in coords:
        if not (1 <= c <= instance.delta):
            raise StreamFormatError(f"coordinate {c} outside [1, {instance.delta}]", line_no)
    return StreamUpdate(1 if parts[0] == "+" else -1, tuple(coords))


HEADER_PREFIX = "# ufl "


def format_header(instance: UflInstance) -> str:
    return f"# ufl d={instance.d} delta={instance.delta} f={instance.f!r}"


def parse_header(line: str, line_no: int = 1) -> UflInstance:
    if not line.startswith(HEADER_PREFIX):
        raise StreamFormatError(f"missing '# ufl' header, got {line!r}", line_no)
    fields: dict[str, str] = {}
    for tok in line[len(HEADER_PREFIX):].split():
        if "=" not in tok:
            raise StreamFormatError(f"bad header token {tok!r}", line_no)
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        return UflInstance(d=int(fields["d"]), delta=int(fields["delta"]), f=float(fields["f"]))
    except KeyError as exc:
        raise StreamFormatError(f"header missing field {exc}", line_no) from exc
    except ValueError as exc:
        raise StreamFormatError(str(exc), line_no) from exc


def validate_stream(updates: Iterable[StreamUpdate]) -> StreamCheck:
    """Check that every prefix keeps net multiplicities in {0, 1}."""
    live: set = set()
    for idx, upd in enumerate(updates, start=1):
        if upd.sign > 0:
            if upd.point in live:
                return StreamCheck(False, idx, f"duplicate insert of {upd.point}")
            live.add(upd.point)
        else:
            if upd.point not in live:
                return StreamCheck(False, idx, f"delete of absent point {upd.point}")
            live.discard(upd.point)
    return StreamCheck(True)


def validate_stream_arrays(stream: Stream) -> StreamCheck:
    """Same as validate_stream but on the packed array representation."""
    live: set[bytes] = set()
    for idx in range(len(stream)):
        key = stream.points[idx].tobytes()
        if stream.signs[idx] > 0:
            if key in live:
                return StreamCheck(
                    False, idx + 1, f"duplicate insert of {tuple(stream.points[idx])}"
                )
            live.add(key)
        else:
            if key not in live:
                return StreamCheck(
                    False, idx + 1, f"delete of absent point {tuple(stream.points[idx])}"
                )
            live.discard(key)
    return StreamCheck(True)


def write_stream(stream: Stream, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_header(stream.instance) + "\n")
        for sign, row in zip(stream.signs, stream.points):
            mark = "+" if sign > 0 else "-"
            fh.write(mark + " " + " ".join(str(int(c)) for c in row) + "\n")


def read_stream(path: str, validate: bool = True) -> Stream:
    """Load a stream file; raises StreamFormatError on any malformed content."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        instance = parse_header(header)
        signs: list[int] = []
        rows: list[list[int]] = []
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            upd = parse_update(line, instance, line_no)
            signs.append(upd.sign)
            rows.append(list(upd.point))
    points = (
        np.array(rows, dtype=np.int64)
        if rows
        else np.empty((0, instance.d), dtype=np.int64)
    )
    stream = Stream(instance, np.array(signs, dtype=np.int8), points)
    if validate:
        check = validate_stream_arrays(stream)
        if not check.valid:
            raise StreamFormatError(
                f"invalid stream: {check.message} (update {check.violation_index})"
            )
    return stream
