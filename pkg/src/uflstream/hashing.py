"""Consistent geometric hashing: grid, face-decomposition, and ball carving.

All constructions map R^d to discrete bucket identifiers with two guarantees:
every bucket has Euclidean diameter at most ell, and every set of diameter at
most ell/gamma meets at most lam buckets.  verify_hash probes both bounds
statistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import prf


class UncoveredPointError(RuntimeError):
    """Ball carving ran out of shift budget before covering a point."""


@dataclass(frozen=True)
class HashParams:
    d: int
    ell: float
    gamma: float
    lam: float
    seed: int = 0
    kind: str = "face"


def face_gamma(d: int) -> float:
    """Gap of the face construction; the 10*d^1.5 constant leaves the
    construction inequalities (cube side vs. accumulated neighborhoods) slack."""
    return 10.0 * d * math.sqrt(d)


def carving_lambda(d: int, gamma: float, c_bc: float = 4.0) -> int:
    return int(math.ceil(math.exp(8.0 * d / gamma) * c_bc * d * max(math.log(d), 0.5)))


def _encode_rows(mat: np.ndarray) -> list[bytes]:
    m = np.ascontiguousarray(mat, dtype=np.int64)
    return [m[i].tobytes() for i in range(m.shape[0])]


class GridHash:
    """Plain hypercube partition: side ell/sqrt(d), consistency 2^d."""

    kind = "grid"

    def __init__(self, d: int, ell: float):
        if ell <= 0:
            raise ValueError("ell must be positive")
        self.d = d
        self.ell = float(ell)
        self.side = ell / math.sqrt(d)

    @property
    def params(self) -> HashParams:
        return HashParams(self.d, self.ell, math.sqrt(self.d), float(2**self.d), 0, self.kind)

    def hash_batch(self, x: np.ndarray) -> list[bytes]:
        x = np.asarray(x, dtype=np.float64)
        return _encode_rows(np.floor(x / self.side).astype(np.int64))

    def hash_point(self, point) -> tuple:
        cells = np.floor(np.asarray(point, dtype=np.float64) / self.side).astype(np.int64)
        return tuple(int(c) for c in cells)


class FaceHash:
    """Cube partition refined by nested l_inf neighborhoods of low-dim faces.

    Coordinates with residual within l_i = (d-i)*eps of the lattice are
    "snapped"; a point belongs to group i when exactly d-i coordinates snap at
    threshold l_i and no lower group claims it first.  The cube side is shrunk
    to 0.8*ell/sqrt(d) so that the +-l_i overhang still keeps every bucket's
    Euclidean diameter at most ell.
    """

    kind = "face"

    def __init__(self, d: int, ell: float):
        if ell <= 0:
            raise ValueError("ell must be positive")
        self.d = d
        self.ell = float(ell)
        self.gamma = face_gamma(d)
        self.eps = self.ell / self.gamma
        self.side = 0.8 * self.ell / math.sqrt(d)  # = 8*d*eps
        # l_thr[i] = (d - i) * eps for i = 0..d-1; group d is the interior.
        self.l_thr = (d - np.arange(d, dtype=np.float64)) * self.eps

    @property
    def params(self) -> HashParams:
        return HashParams(self.d, self.ell, self.gamma, float(self.d + 1), 0, self.kind)

    # -- residual geometry ---------------------------------------------------

    def _residuals(self, x: np.ndarray):
        t = self.side
        cell = np.floor(x / t)
        frac = x - cell * t
        near_high = frac * 2.0 > t
        g = np.where(near_high, t - frac, frac)
        nearest = cell.astype(np.int64) + near_high.astype(np.int64)
        return cell.astype(np.int64), g, nearest, near_high

    def _groups(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Group index per point plus the snapped-coordinate mask."""
        d = self.d
        sg = np.sort(g, axis=1)
        # cond[:, i] true iff the (d-i)-th smallest residual is <= l_i.
        cond = sg[:, ::-1] <= self.l_thr[None, :]
        any_face = cond.any(axis=1)
        first = np.argmax(cond, axis=1)
        group = np.where(any_face, first, d)
        thr = np.where(group < d, self.l_thr[np.minimum(group, d - 1)], -1.0)
        snapped = g <= thr[:, None]
        return group, snapped

    def _id_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cell, g, nearest, _ = self._residuals(x)
        group, snapped = self._groups(g)
        vals = np.where(snapped, (nearest << 1) | 1, cell << 1)
        return np.concatenate([group[:, None], vals], axis=1)

    def hash_batch(self, x: np.ndarray) -> list[bytes]:
        return _encode_rows(self._id_matrix(x))

    def hash_point(self, point) -> tuple:
        row = self._id_matrix(np.asarray(point, dtype=np.float64)[None, :])[0]
        return tuple(int(v) for v in row)

    def group_of(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        _, g, _, _ = self._residuals(x)
        return self._groups(g)[0]

    # -- enlarged-bucket enumeration -----------------------------------------

    def enlarged_ids(self, x: np.ndarray, rho: float):
        """Bucket ids met by balls B(p, rho), as (point_idx, id-bytes) pairs.

        For each target group the minimal-move witness point is constructed
        (snap the d-t smallest residuals, push the m-th smallest remaining one
        above l_{t-m}); a witness within rho certifies membership, so the
        result is a certified subset of the exact enlarged image.  rho must
        not exceed eps/2 so the d+1 consistency bound applies.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        if rho > 0.5 * self.eps * (1 + 1e-9):
            raise ValueError("rho must be at most eps/2")
        own = self._id_matrix(x)
        out_idx = [np.arange(n)]
        out_ids = [own]

        t_side = self.side
        cell, g, nearest, near_high = self._residuals(x)
        order = np.argsort(g, axis=1, kind="stable")
        sg = np.take_along_axis(g, order, axis=1)
        rho_sq = rho * rho
        # Guard for float granularity: moves below the coordinate ulp scale
        # cannot be represented, so the enlargement degenerates to own buckets.
        ulp = float(np.max(np.spacing(np.abs(x)))) if x.size else 0.0
        pad = max(1e-6 * self.eps, 8.0 * ulp)
        if pad > 0.45 * self.eps:
            return np.concatenate(out_idx), np.concatenate(out_ids, axis=0)

        own_group = own[:, 0]
        for t in range(d + 1):
            n_snap = d - t
            # Move cost for snapping the n_snap smallest residuals to <= l_t...
            if t < d:
                l_t = self.l_thr[t]
                snap_over = np.maximum(0.0, sg[:, :n_snap] - (l_t - pad))
                cost_sq = np.einsum("ij,ij->i", snap_over, snap_over)
            else:
                l_t = -1.0
                cost_sq = np.zeros(n)
            # ...plus pushing the m-th smallest free residual above l_{t-m}.
            m_max = min(t, d - n_snap)
            for m in range(1, m_max + 1):
                thr = self.l_thr[t - m] + pad
                gap = np.maximum(0.0, thr - sg[:, n_snap + m - 1])
                cost_sq = cost_sq + gap * gap
            cand = (cost_sq <= rho_sq) & (own_group != t)
            idx = np.nonzero(cand)[0]
            if idx.size == 0:
                continue
            w = x[idx].copy()
            g_i = g[idx]
            near_i = near_high[idx]
            cell_i = cell[idx]
            ord_i = order[idx]
            lattice_lo = cell_i.astype(np.float64) * t_side
            lattice = np.where(near_i, lattice_lo + t_side, lattice_lo)
            sign = np.where(near_i, -1.0, 1.0)  # +res moves away from lattice
            targets = g_i.copy()
            rows = np.arange(idx.size)[:, None]
            if t < d:
                cols = ord_i[:, :n_snap]
                targets[rows, cols] = np.minimum(g_i[rows, cols], l_t - pad)
            for m in range(1, m_max + 1):
                colm = ord_i[:, n_snap + m - 1]
                thr = self.l_thr[t - m] + pad
                cur = targets[np.arange(idx.size), colm]
                targets[np.arange(idx.size), colm] = np.maximum(cur, thr)
            w = lattice + sign * targets
            move = w - x[idx]
            ok = np.einsum("ij,ij->i", move, move) <= rho_sq * (1 + 1e-12)
            if not ok.any():
                continue
            out_idx.append(idx[ok])
            out_ids.append(self._id_matrix(w[ok]))
        all_idx = np.concatenate(out_idx)
        all_ids = np.concatenate(out_ids, axis=0)
        return all_idx, all_ids

    def enlarged_buckets(self, point, rho: float) -> set[tuple]:
        """Set of bucket-id tuples met by B(point, rho) (deduplicated)."""
        idx, ids = self.enlarged_ids(np.asarray(point, dtype=np.float64)[None, :], rho)
        return {tuple(int(v) for v in ids[i]) for i in range(ids.shape[0])}


class BallCarvingHash:
    """Greedy carving by shifted lattice balls of radius ell/2.

    Shift vectors come from a keyed pseudorandom function of (seed, round), so
    the map is identical across processes.  Evaluation enumerates rounds until
    the point lies in some ball; running out of budget raises.
    """

    kind = "carve"

    def __init__(self, d: int, ell: float, gamma: float, seed: int, budget: int | None = None):
        if ell <= 0:
            raise ValueError("ell must be positive")
        if d > 10:
            raise ValueError("ball carving is capped at d <= 10")
        if gamma < 4:
            raise ValueError("gamma must be at least 4 for the carving bounds")
        self.d = d
        self.ell = float(ell)
        self.gamma = float(gamma)
        self.seed = seed
        self.w = self.ell / 2.0
        self.pitch = 4.0 * self.w
        if budget is None:
            budget = 2 ** min(20, max(10, math.ceil(d * math.log2(max(d, 2)))))
        self.budget = budget

    @property
    def params(self) -> HashParams:
        return HashParams(self.d, self.ell, self.gamma,
                          float(carving_lambda(self.d, self.gamma)), self.seed, self.kind)

    def _shift(self, i: int) -> np.ndarray:
        vals = np.array(
            [prf.fold(self.seed, 0xB0C, i, k) for k in range(self.d)], dtype=np.uint64
        )
        return vals.astype(np.float64) * (2.0**-64) * self.pitch

    def hash_batch(self, x: np.ndarray) -> list[bytes]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        ids = np.zeros((n, d + 1), dtype=np.int64)
        active = np.arange(n)
        w_sq = self.w * self.w
        for i in range(1, self.budget + 1):
            if active.size == 0:
                break
            v = self._shift(i)
            rel = x[active] - v[None, :]
            u = np.rint(rel / self.pitch)
            diff = rel - u * self.pitch
            hit = np.einsum("ij,ij->i", diff, diff) <= w_sq
            if hit.any():
                rows = active[hit]
                ids[rows, 0] = i
                ids[rows, 1:] = u[hit].astype(np.int64)
                active = active[~hit]
        if active.size:
            raise UncoveredPointError(
                f"{active.size} point(s) uncovered after {self.budget} carving rounds"
            )
        return _encode_rows(ids)

    def hash_point(self, point) -> tuple:
        row = self.hash_batch(np.asarray(point, dtype=np.float64)[None, :])[0]
        vals = np.frombuffer(row, dtype=np.int64)
        return tuple(int(v) for v in vals)


def make_hash(kind: str, d: int, ell: float, gamma: float | None = None, seed: int = 0):
    if kind == "grid":
        return GridHash(d, ell)
    if kind == "face":
        return FaceHash(d, ell)
    if kind == "carve":
        return BallCarvingHash(d, ell, gamma if gamma is not None else 8.0, seed)
    raise ValueError(f"unknown hash construction {kind!r}")


def verify_hash(hash_obj, trials: int, rng_seed: int, cluster_size: int = 8,
                pair_probes: int | None = None) -> dict:
    """Statistical check of the diameter and consistency bounds.

    Samples nearby point pairs and small-diameter clusters in a box spanning
    several buckets; reports the worst observed same-bucket distance and the
    largest number of buckets hit by any sampled cluster.
    """
    rng = np.random.default_rng(rng_seed)
    d = hash_obj.d
    ell = hash_obj.ell
    gamma = hash_obj.params.gamma
    box = 16.0 * ell
    if pair_probes is None:
        pair_probes = trials

    max_diam = 0.0
    centers = rng.uniform(0, box, size=(pair_probes, d))
    dirs = rng.normal(size=(pair_probes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0, 1.05 * ell, size=pair_probes)
    others = centers + dirs * radii[:, None]
    ids_a = hash_obj.hash_batch(centers)
    ids_b = hash_obj.hash_batch(others)
    same = np.array([a == b for a, b in zip(ids_a, ids_b)])
    if same.any():
        dists = np.linalg.norm((centers - others)[same], axis=1)
        max_diam = float(dists.max())

    max_cons = 0
    batch = max(1, 50000 // max(cluster_size, 1))
    done = 0
    radius = 0.5 * ell / gamma
    while done < trials:
        nb = min(batch, trials - done)
        z = rng.uniform(0, box, size=(nb, d))
        offs = rng.normal(size=(nb, cluster_size, d))
        offs /= np.linalg.norm(offs, axis=2, keepdims=True)
        rr = rng.uniform(0, radius, size=(nb, cluster_size, 1)) ** 1.0
        pts = z[:, None, :] + offs * rr
        ids = hash_obj.hash_batch(pts.reshape(-1, d))
        for t in range(nb):
            chunk = ids[t * cluster_size : (t + 1) * cluster_size]
            max_cons = max(max_cons, len(set(chunk)))
        done += nb

    return {
        "construction": hash_obj.kind,
        "d": d,
        "ell": ell,
        "gamma": gamma,
        "lambda_bound": hash_obj.params.lam,
        "trials": trials,
        "max_same_bucket_distance": max_diam,
        "max_cluster_buckets": int(max_cons),
    }
