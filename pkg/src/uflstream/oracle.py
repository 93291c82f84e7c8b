"""Offline ground truth: opening radii, the Mettu-Plaxton scan, exact
candidate-restricted optima, and the streaming ball-counting radius estimate.

Everything here is deterministic and exact (up to floating epsilon); the
streaming estimators are validated against these values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import pairwise_sq_dists


def compute_rp(points: np.ndarray, f: float) -> np.ndarray:
    """Per-point radius r_p solving sum_{x in B(p, r)} (r - dist(p, x)) = f.

    The left side is piecewise linear in r with breakpoints at the sorted
    distances from p, so each r_p is solved exactly on its segment; no root
    finding is involved.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("point set must be nonempty")
    if f <= 0:
        raise ValueError("opening cost must be positive")
    dist = np.sqrt(pairwise_sq_dists(pts))
    dist.sort(axis=1)
    prefix = np.cumsum(dist, axis=1)
    ks = np.arange(1, n + 1, dtype=np.float64)
    cand = (f + prefix) / ks  # solution if it lands inside segment k
    nxt = np.concatenate([dist[:, 1:], np.full((n, 1), np.inf)], axis=1)
    valid = cand <= nxt
    first = np.argmax(valid, axis=1)
    return cand[np.arange(n), first]


def rp_table(points: np.ndarray, f: float) -> dict[tuple, float]:
    rp = compute_rp(points, f)
    return {tuple(int(c) for c in row): float(r) for row, r in zip(points, rp)}


def sum_rp(points: np.ndarray, f: float) -> float:
    if len(points) == 0:
        return 0.0
    return float(np.sum(compute_rp(points, f)))


def rp_residuals(points: np.ndarray, f: float, rp: np.ndarray) -> np.ndarray:
    """|sum_{x in B(p, r_p)} (r_p - dist) - f| for each point; ~0 for exact r_p."""
    dist = np.sqrt(pairwise_sq_dists(np.asarray(points, dtype=np.float64)))
    inside = dist <= rp[:, None] + 1e-12 * f
    lhs = np.sum(np.maximum(rp[:, None] - dist, 0.0) * inside, axis=1)
    return np.abs(lhs - f)


def point_levels(rp: np.ndarray, f: float) -> np.ndarray:
    """Level j per point with r_p in (2^-j f, 2^-(j-1) f]; j >= 1 since r_p <= f."""
    r = np.asarray(rp, dtype=np.float64)
    with np.errstate(divide="ignore"):
        j = np.ceil(np.log2(f / r)).astype(np.int64)
    j = np.maximum(j, 1)
    # fix up float fuzz so the dyadic window contains r exactly
    for _ in range(2):
        too_low = r > (2.0 ** (-j + 1)) * f
        j[too_low] += 1
        too_high = (j > 1) & (r <= (2.0**-j) * f)
        j[too_high] -= 1
    return j


# ---------------------------------------------------------------------------
# Mettu-Plaxton scan


@dataclass
class MpSolution:
    facility_indices: np.ndarray  # indices into the point array, opening order
    assignment: np.ndarray  # per point, position into facility_indices
    cost: float
    connection_cost: float
    opening_cost: float


def mp_facilities(points: np.ndarray, f: float, rp: np.ndarray | None = None) -> MpSolution:
    """Scan points by nondecreasing r_p (ties lexicographic); open unless an
    open facility already sits within 2 r_p; assign each point to its nearest
    facility."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("point set must be nonempty")
    if rp is None:
        rp = compute_rp(pts, f)
    keys = [pts[:, k] for k in range(pts.shape[1] - 1, -1, -1)] + [rp]
    order = np.lexsort(keys)
    open_rows: list[int] = []
    open_pts: list[np.ndarray] = []
    for idx in order:
        p = pts[idx]
        if open_pts:
            arr = np.stack(open_pts)
            d2 = np.einsum("ij,ij->i", arr - p, arr - p)
            if np.any(d2 <= (2.0 * rp[idx]) ** 2):
                continue
        open_rows.append(int(idx))
        open_pts.append(p)
    fac = np.array(open_rows, dtype=np.int64)
    fac_pts = pts[fac]
    d2 = pairwise_sq_dists(fac_pts, pts)  # (n, |F|)
    assignment = np.argmin(d2, axis=1)
    conn = float(np.sqrt(d2[np.arange(n), assignment]).sum())
    opening = f * len(fac)
    return MpSolution(fac, assignment, conn + opening, conn, opening)


def ufl_cost(points: np.ndarray, facilities: np.ndarray, f: float) -> float:
    """Exact objective: sum of distances to the nearest facility plus f per facility."""
    pts = np.asarray(points, dtype=np.float64)
    fac = np.asarray(facilities, dtype=np.float64)
    if pts.shape[0] == 0:
        return 0.0 if fac.shape[0] == 0 else f * fac.shape[0]
    if fac.shape[0] == 0:
        raise ValueError("facility set must be nonempty when points exist")
    d2 = pairwise_sq_dists(fac, pts)
    return float(np.sqrt(d2.min(axis=1)).sum()) + f * fac.shape[0]


# ---------------------------------------------------------------------------
# Extended MP clustering (facility cells split per level, chunked to 2^j)


@dataclass
class MpClustering:
    clusters: list  # list of int index arrays partitioning the points
    levels: np.ndarray  # level j of each cluster
    facilities: np.ndarray  # owning facility point-index of each cluster
    diameters: np.ndarray
    sizes: np.ndarray


def extended_mp_clustering(
    points: np.ndarray, f: float, rp: np.ndarray, mp: MpSolution
) -> MpClustering:
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    levels = point_levels(rp, f)
    clusters: list[np.ndarray] = []
    c_levels: list[int] = []
    c_fac: list[int] = []
    for fpos, frow in enumerate(mp.facility_indices):
        mine = np.nonzero(mp.assignment == fpos)[0]
        if mine.size == 0:
            continue
        for j in np.unique(levels[mine]):
            members = mine[levels[mine] == j]
            # deterministic chunk order: lexicographic on coordinates
            mk = [pts[members, k] for k in range(pts.shape[1] - 1, -1, -1)]
            members = members[np.lexsort(mk)]
            size = 1 << int(j)
            for start in range(0, members.size, size):
                chunk = members[start : start + size]
                clusters.append(chunk)
                c_levels.append(int(j))
                c_fac.append(int(frow))
    diam = np.zeros(len(clusters))
    sizes = np.zeros(len(clusters), dtype=np.int64)
    for i, chunk in enumerate(clusters):
        sizes[i] = chunk.size
        if chunk.size > 1:
            d2 = pairwise_sq_dists(pts[chunk])
            diam[i] = math.sqrt(float(d2.max()))
    total = sum(int(c.size) for c in clusters)
    if total != n:
        raise AssertionError("clusters do not partition the point set")
    return MpClustering(
        clusters, np.array(c_levels), np.array(c_fac), diam, sizes
    )


# ---------------------------------------------------------------------------
# Candidate-restricted exact optimum (exponential subset search)


def exact_opt_candidates(
    points: np.ndarray, f: float, candidates: np.ndarray
) -> tuple[float, np.ndarray]:
    """Minimum UFL cost over nonempty facility subsets of the candidate list.

    Exponential in |candidates|; refuses more than 24.
    Returns (cost, chosen candidate indices).
    """
    pts = np.asarray(points, dtype=np.float64)
    cand = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    m = cand.shape[0]
    if m == 0:
        if pts.shape[0] == 0:
            return 0.0, np.array([], dtype=np.int64)
        raise ValueError("no candidates for a nonempty point set")
    if m > 24:
        raise ValueError(f"refusing exponential search over {m} > 24 candidates")
    if pts.shape[0] == 0:
        return 0.0, np.array([], dtype=np.int64)
    dist = np.sqrt(pairwise_sq_dists(cand, pts))  # (n, m)
    best = math.inf
    best_mask = 0
    for mask in range(1, 1 << m):
        cols = [j for j in range(m) if mask >> j & 1]
        cost = f * len(cols) + float(dist[:, cols].min(axis=1).sum())
        if cost < best - 1e-15:
            best = cost
            best_mask = mask
    chosen = np.array([j for j in range(m) if best_mask >> j & 1], dtype=np.int64)
    return best, chosen


# ---------------------------------------------------------------------------
# Streaming ball-counting estimate of r_p (Fact-2.4 style sandwich)


class RpBallCounter:
    """Counters |P ∩ B(p, 2^-j f)| for j = 0..L, maintained under a dynamic
    stream; the estimate 2^(1-j0) f with j0 the deepest level holding at least
    2^j points satisfies r_p <= estimate <= 4 r_p."""

    def __init__(self, point, f: float, L: int):
        self.point = np.asarray(point, dtype=np.float64)
        self.f = f
        self.L_eff = min(L, 64)  # counts >= 2^j are impossible past 64 at desk scale
        js = np.arange(self.L_eff + 1, dtype=np.float64)
        self.radii_sq = (f * 2.0**-js) ** 2
        self.counts = np.zeros(self.L_eff + 1, dtype=np.int64)

    def update(self, sign: int, q) -> None:
        diff = np.asarray(q, dtype=np.float64) - self.point
        d2 = float(diff @ diff)
        self.counts += sign * (d2 <= self.radii_sq)

    def estimate(self) -> float:
        if self.counts[0] < 1:
            raise ValueError("query point absent from the stream; estimate undefined")
        thresh = 2.0 ** np.arange(self.L_eff + 1)  # float: 1 << 63 overflows int64
        ok = self.counts >= thresh
        j0 = int(np.max(np.nonzero(ok)[0]))
        return float(2.0 ** (-j0 + 1) * self.f)


def rp_hat_batch(
    points: np.ndarray,
    queries: np.ndarray,
    f: float,
    L: int,
    count_self: bool = False,
) -> np.ndarray:
    """Vectorized ball-counting estimates for many query points at once.

    Equivalent to running RpBallCounter over any valid stream with this net
    point set.  count_self adds the query point itself to every counter (used
    when estimating against a half-stream that excludes it).
    """
    pts = np.asarray(points, dtype=np.float64)
    qs = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    L_eff = min(L, 64)
    radii = f * 2.0 ** -np.arange(L_eff + 1, dtype=np.float64)
    thresh = 2.0 ** np.arange(L_eff + 1)
    out = np.empty(qs.shape[0])
    if pts.shape[0] == 0:
        dist_sorted = np.empty((qs.shape[0], 0))
    else:
        dist_sorted = np.sqrt(pairwise_sq_dists(pts, qs))
        dist_sorted.sort(axis=1)
    for i in range(qs.shape[0]):
        counts = np.searchsorted(dist_sorted[i], radii, side="right")
        if count_self:
            counts = counts + 1
        ok = counts >= thresh
        if not ok[0]:
            raise ValueError("query point absent and count_self not set")
        j0 = int(np.max(np.nonzero(ok)[0]))
        out[i] = 2.0 ** (-j0 + 1) * f
    return out
