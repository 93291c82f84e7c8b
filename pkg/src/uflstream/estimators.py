"""Streaming estimators for the uniform facility location cost.

Three algorithms share one sampling core: a per-level geometric hash groups
subsampled points into buckets, a two-level distinct sampler picks a uniform
nonempty bucket and a uniform point inside it, and the reported inverse
sampling probability turns hits into an unbiased cost contribution.

* two_pass_estimate: pass 1 draws importance samples, pass 2 estimates each
  sampled point's opening radius by ball counting.
* random_order_estimate: insertion-only random-order streams; the first half
  feeds the samplers, the second half the radius counters.
* one_pass_estimate: per-level bucket frequencies plus enlarged-neighborhood
  counters implement an approximate level tester; passing buckets contribute
  support_size * bucket_count * f, and a capacity-limited sparse recovery
  provides the exact fallback for small inputs.

Two interchangeable backends exist: "exact" keeps dictionary state with the
same output laws (the small-range mode used at desk scale), "linear" runs the
real linear sketches end to end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracle, prf
from .core import Stream, UflInstance, validate_stream_arrays
from .hashing import FaceHash
from .sketch import (
    DistinctCounter,
    L0Params,
    L0WithData,
    QueryEmpty,
    QueryFailed,
    SparseRecovery,
    TwoLevelL0,
)


@dataclass
class SampleResult:
    """Outcome of one importance-sampling draw (point is None for NIL)."""

    point: tuple | None
    prob_estimate: float | None
    level: int
    bucket_size: int = 0
    bucket_count: int = 0
    failed: bool = False


@dataclass
class EstimateReport:
    algo: str
    estimate: float
    per_level: dict = field(default_factory=dict)
    samples_drawn: int = 0
    nil_samples: int = 0
    failures: int = 0
    fallback_used: bool = False
    reliable: bool = True
    seed: int = 0
    config: dict = field(default_factory=dict)
    space_bytes: int = 0
    sample_trace: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "estimate": self.estimate,
            "per_level": {str(k): v for k, v in sorted(self.per_level.items())},
            "samples_drawn": self.samples_drawn,
            "nil_samples": self.nil_samples,
            "failures": self.failures,
            "fallback_used": self.fallback_used,
            "reliable": self.reliable,
            "seed": self.seed,
            "config": self.config,
            "space_bytes": self.space_bytes,
            "sample_trace": self.sample_trace,
            "timing": self.timing,
        }


# ---------------------------------------------------------------------------
# Defaults (polylog constants pinned at desk scale, overridable via the CLI)


def default_m_samples(instance: UflInstance) -> int:
    return min(4096, 64 * instance.levels**2)


def default_t_counters(instance: UflInstance) -> int:
    return min(256, 8 * instance.levels)


def default_m_queries(instance: UflInstance, gamma: float) -> int:
    lam = instance.d + 1
    return min(8192, int(64 * gamma * gamma * lam * lam))


TESTER_THRESHOLD = 20.0
FALLBACK_CAPACITY = 4096


def level_ell(instance: UflInstance, i: int) -> float:
    return 0.1 * (2.0**-i) * instance.f


def sampling_level_count(instance: UflInstance, n_upper: int) -> int:
    """Levels the mixture actually draws from: enough to cover every occupied
    radius class (r_p >= f/|P|), bounded by the instance's full level count."""
    if n_upper < 1:
        return 1
    return max(1, min(instance.levels, math.ceil(math.log2(max(n_upper, 2))) + 2))


def _void_rows(mat: np.ndarray) -> np.ndarray:
    m = np.ascontiguousarray(mat, dtype=np.int64)
    return m.view([("", np.int64)] * m.shape[1]).reshape(-1)


def _require_valid(stream: Stream) -> None:
    check = validate_stream_arrays(stream)
    if not check.valid:
        raise ValueError(f"invalid stream: {check.message} at update {check.violation_index}")


def enumerate_enlarged_buckets(point, hash_obj, eps: float) -> set[tuple]:
    """Image of B(point, eps/2) under a structured hash (face hash only)."""
    if not isinstance(hash_obj, FaceHash):
        raise NotImplementedError(
            f"enlarged-bucket enumeration unsupported for {type(hash_obj).__name__}"
        )
    return hash_obj.enlarged_buckets(np.asarray(point, dtype=np.float64), eps / 2.0)


# ---------------------------------------------------------------------------
# Exact-backend sampling core (vectorized over the net point set)


class _ExactContext:
    """Net live set of a validated stream plus cached per-point hash keys."""

    def __init__(self, instance: UflInstance, live: np.ndarray):
        self.instance = instance
        self.live = live
        self.keys = prf.point_keys(live) if live.shape[0] else np.empty(0, np.uint64)
        self._hashes: dict[int, tuple[FaceHash, np.ndarray]] = {}

    @classmethod
    def from_stream(cls, stream: Stream) -> "_ExactContext":
        return cls(stream.instance, stream.live_points())

    def level_hash(self, i: int) -> tuple[FaceHash, np.ndarray]:
        """Face hash at level i plus the void-view bucket id of every live point."""
        if i not in self._hashes:
            fh = FaceHash(self.instance.d, level_ell(self.instance, i))
            ids = _void_rows(fh._id_matrix(self.live.astype(np.float64)))
            self._hashes[i] = (fh, ids)
        return self._hashes[i]


def _exact_level_sample(
    ctx: _ExactContext, level: int, sub_seed: int, draw_seed: int
) -> SampleResult:
    if ctx.live.shape[0] == 0:
        return SampleResult(None, None, level)
    mask = prf.subsample_mask(ctx.keys, sub_seed, level)
    if not mask.any():
        return SampleResult(None, None, level)
    _, ids = ctx.level_hash(level)
    sel = np.nonzero(mask)[0]
    uniq, inverse = np.unique(ids[sel], return_inverse=True)
    nb = uniq.shape[0]
    rng = np.random.default_rng(draw_seed)
    b = int(rng.integers(nb))
    members = sel[np.nonzero(inverse == b)[0]]
    pick = members[int(rng.integers(members.size))]
    n_a = int(members.size)
    prob = (2.0**-level) / (nb * n_a)
    point = tuple(int(c) for c in ctx.live[pick])
    return SampleResult(point, prob, level, bucket_size=n_a, bucket_count=nb)


def _exact_sample_bank(
    ctx: _ExactContext, m: int, seed: int, level_count: int
) -> list[SampleResult]:
    levels = np.array(
        [1 + prf.fold(seed, 0x11, j) % level_count for j in range(m)], dtype=np.int64
    )
    out: list[SampleResult] = [None] * m  # type: ignore[list-item]
    for i in np.unique(levels):
        ctx.level_hash(int(i))  # warm the per-level hash cache once
        for j in np.nonzero(levels == i)[0]:
            out[int(j)] = _exact_level_sample(
                ctx, int(i), prf.fold(seed, 0x5B, int(j)), prf.fold(seed, 0xD7, int(j))
            )
    return out


# ---------------------------------------------------------------------------
# Linear-backend sampling core (real sketches, streamed update by update)


class _PointCodec:
    def __init__(self, instance: UflInstance):
        self.instance = instance
        self.width = instance.delta.bit_length()

    def encode(self, point) -> int:
        acc = 0
        for k, c in enumerate(point):
            acc |= (int(c) - 1) << (k * self.width)
        return acc

    def decode(self, code: int) -> tuple:
        mask = (1 << self.width) - 1
        return tuple(((code >> (k * self.width)) & mask) + 1 for k in range(self.instance.d))

    @property
    def bits(self) -> int:
        return self.width * self.instance.d


def _bucket_to_int(id_bytes: bytes) -> int:
    return int.from_bytes(id_bytes, "little")


class LinearLevelSampler:
    """Streaming implementation of one level's bucket-then-point sampler."""

    def __init__(self, instance: UflInstance, level: int, seed: int,
                 support_log: int = 24):
        self.instance = instance
        self.level = level
        self.seed = seed
        self.codec = _PointCodec(instance)
        self.hash = FaceHash(instance.d, level_ell(instance, level))
        self.two_level = TwoLevelL0(
            L0Params(support_log, cells=8, reps=8),
            L0Params(support_log, cells=4, reps=4),
            self.codec.bits,
            prf.fold(seed, 0x2F),
        )
        self.distinct = DistinctCounter(prf.fold(seed, 0xDC))
        self.sub_seed = prf.fold(seed, 0x5B)

    def update(self, sign: int, point) -> None:
        key = prf.scalar_point_key(tuple(point))
        if self.level > 0:
            if self.level >= 64:
                return
            if prf.mix64(key ^ prf.mix64(self.sub_seed)) >= 1 << (64 - self.level):
                return
        bucket = _bucket_to_int(
            self.hash.hash_batch(np.asarray(point, dtype=np.float64)[None, :])[0]
        )
        self.two_level.update(bucket, self.codec.encode(point), sign)
        self.distinct.update(bucket, sign)

    def result(self) -> SampleResult:
        try:
            _, col, row_sum = self.two_level.query()
        except QueryEmpty:
            return SampleResult(None, None, self.level)
        except QueryFailed:
            return SampleResult(None, None, self.level, failed=True)
        b_hat = max(1.0, self.distinct.estimate() / 1.15)
        prob = (2.0**-self.level) / (b_hat * max(1, row_sum))
        return SampleResult(
            self.codec.decode(col), prob, self.level,
            bucket_size=int(row_sum), bucket_count=int(round(b_hat)),
        )

    def state_bytes(self) -> int:
        return len(self.two_level.to_bytes()) + len(self.distinct.to_bytes())


def _linear_sample_bank(
    stream: Stream, m: int, seed: int, level_count: int
) -> tuple[list[SampleResult], int]:
    inst = stream.instance
    banks = [
        LinearLevelSampler(inst, 1 + prf.fold(seed, 0x11, j) % level_count,
                           prf.fold(seed, 0x1EA, j))
        for j in range(m)
    ]
    for sign, row in zip(stream.signs, stream.points):
        pt = tuple(int(c) for c in row)
        for bank in banks:
            bank.update(int(sign), pt)
    space = sum(b.state_bytes() for b in banks)
    return [b.result() for b in banks], space


# ---------------------------------------------------------------------------
# Public sampling operations


def level_sample(stream: Stream, level: int, seed: int = 0,
                 backend: str = "exact") -> SampleResult:
    """One bucket-uniform-then-point-uniform draw at a fixed subsampling level."""
    _require_valid(stream)
    if not (0 <= level):
        raise ValueError("level must be nonnegative")
    if backend == "exact":
        ctx = _ExactContext.from_stream(stream)
        return _exact_level_sample(
            ctx, level, prf.fold(seed, 0x5B), prf.fold(seed, 0xD7)
        )
    sampler = LinearLevelSampler(stream.instance, level, seed)
    for sign, row in zip(stream.signs, stream.points):
        sampler.update(int(sign), tuple(int(c) for c in row))
    return sampler.result()


def importance_sample(stream: Stream, seed: int = 0, backend: str = "exact") -> SampleResult:
    """Mixture draw: uniform level, then the per-level sampler."""
    _require_valid(stream)
    level_count = sampling_level_count(stream.instance, stream.insertion_count)
    level = 1 + prf.fold(seed, 0x11, 0) % level_count
    if backend == "exact":
        ctx = _ExactContext.from_stream(stream)
        return _exact_level_sample(
            ctx, level, prf.fold(seed, 0x5B, 0), prf.fold(seed, 0xD7, 0)
        )
    sampler = LinearLevelSampler(stream.instance, level, prf.fold(seed, 0x1EA, 0))
    for sign, row in zip(stream.signs, stream.points):
        sampler.update(int(sign), tuple(int(c) for c in row))
    return sampler.result()


# ---------------------------------------------------------------------------
# Two-pass estimator


@dataclass
class PassOneState:
    """Pass-1 output persisted between the two passes."""

    seed: int
    m: int
    level_count: int
    backend: str
    samples: list  # SampleResult list

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "m": self.m,
            "level_count": self.level_count,
            "backend": self.backend,
            "samples": [
                {
                    "point": list(s.point) if s.point is not None else None,
                    "prob_estimate": s.prob_estimate,
                    "level": s.level,
                    "bucket_size": s.bucket_size,
                    "bucket_count": s.bucket_count,
                    "failed": s.failed,
                }
                for s in self.samples
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PassOneState":
        samples = [
            SampleResult(
                tuple(s["point"]) if s["point"] is not None else None,
                s["prob_estimate"], s["level"], s["bucket_size"],
                s["bucket_count"], s["failed"],
            )
            for s in data["samples"]
        ]
        return cls(data["seed"], data["m"], data["level_count"], data["backend"], samples)


def two_pass_pass1(stream: Stream, m: int | None = None, seed: int = 0,
                   backend: str = "exact") -> tuple[PassOneState, int]:
    _require_valid(stream)
    inst = stream.instance
    if m is None:
        m = default_m_samples(inst)
    level_count = sampling_level_count(inst, stream.insertion_count)
    if backend == "exact":
        ctx = _ExactContext.from_stream(stream)
        samples = _exact_sample_bank(ctx, m, seed, level_count)
        space = 0
    elif backend == "linear":
        samples, space = _linear_sample_bank(stream, m, seed, level_count)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return PassOneState(seed, m, level_count, backend, samples), space


def two_pass_pass2(stream: Stream, state: PassOneState) -> EstimateReport:
    if state is None or not isinstance(state, PassOneState):
        raise ValueError("pass-2 requires the persisted pass-1 state")
    inst = stream.instance
    live = stream.live_points()
    queried = [s for s in state.samples if s.point is not None]
    terms = np.zeros(state.m)
    if queried and live.shape[0]:
        qpts = np.array([s.point for s in queried], dtype=np.float64)
        r_hat = oracle.rp_hat_batch(live, qpts, inst.f, inst.levels)
        qi = 0
        for j, s in enumerate(state.samples):
            if s.point is not None:
                terms[j] = r_hat[qi] / s.prob_estimate
                qi += 1
    estimate = float(terms.mean()) if state.m else 0.0
    per_level: dict[int, float] = {}
    for j, s in enumerate(state.samples):
        per_level[s.level] = per_level.get(s.level, 0.0) + float(terms[j]) / state.m
    failures = sum(1 for s in state.samples if s.failed)
    trace = [
        {"level": s.level, "point": list(s.point) if s.point else None,
         "prob": s.prob_estimate}
        for s in state.samples
    ]
    return EstimateReport(
        algo="two-pass",
        estimate=estimate,
        per_level=per_level,
        samples_drawn=state.m,
        nil_samples=sum(1 for s in state.samples if s.point is None and not s.failed),
        failures=failures,
        reliable=failures <= 0.2 * state.m,
        seed=state.seed,
        sample_trace=trace,
    )


def two_pass_estimate(stream: Stream, m: int | None = None, seed: int = 0,
                      backend: str = "exact", trace: bool = True) -> EstimateReport:
    t0 = time.perf_counter()
    state, space = two_pass_pass1(stream, m, seed, backend)
    report = two_pass_pass2(stream, state)
    report.space_bytes = space
    report.config = {"m": state.m, "backend": backend,
                     "level_count": state.level_count}
    if not trace:
        report.sample_trace = []
    report.timing = {"wall_time_s": time.perf_counter() - t0}
    return report


# ---------------------------------------------------------------------------
# Random-order estimator (insertion-only, |P| known)


def random_order_estimate(stream: Stream, m: int | None = None, seed: int = 0,
                          backend: str = "exact", trace: bool = True) -> EstimateReport:
    t0 = time.perf_counter()
    _require_valid(stream)
    inst = stream.instance
    if np.any(stream.signs < 0):
        raise ValueError("random-order estimation requires an insertion-only stream")
    n = len(stream)
    if m is None:
        m = default_m_samples(inst)
    half = (n + 1) // 2
    first = Stream(inst, stream.signs[:half], stream.points[:half])
    rest_points = stream.points[half:]
    level_count = sampling_level_count(inst, max(half, 1))
    if backend == "exact":
        ctx = _ExactContext.from_stream(first)
        samples = _exact_sample_bank(ctx, m, seed, level_count)
        space = 0
    elif backend == "linear":
        samples, space = _linear_sample_bank(first, m, seed, level_count)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    terms = np.zeros(m)
    queried = [s for s in samples if s.point is not None]
    if queried:
        qpts = np.array([s.point for s in queried], dtype=np.float64)
        # second half plus the sampled point itself
        r_hat = oracle.rp_hat_batch(rest_points, qpts, inst.f, inst.levels,
                                    count_self=True)
        qi = 0
        for j, s in enumerate(samples):
            if s.point is not None:
                terms[j] = r_hat[qi] / s.prob_estimate
                qi += 1
    estimate = float(terms.mean()) if m else 0.0
    per_level: dict[int, float] = {}
    for j, s in enumerate(samples):
        per_level[s.level] = per_level.get(s.level, 0.0) + float(terms[j]) / m
    failures = sum(1 for s in samples if s.failed)
    report = EstimateReport(
        algo="random-order",
        estimate=estimate,
        per_level=per_level,
        samples_drawn=m,
        nil_samples=sum(1 for s in samples if s.point is None and not s.failed),
        failures=failures,
        reliable=failures <= 0.2 * m,
        seed=seed,
        config={"m": m, "backend": backend, "level_count": level_count,
                "half": half},
        space_bytes=space,
    )
    if trace:
        report.sample_trace = [
            {"level": s.level, "point": list(s.point) if s.point else None,
             "prob": s.prob_estimate}
            for s in samples
        ]
    report.timing = {"wall_time_s": time.perf_counter() - t0}
    return report


# ---------------------------------------------------------------------------
# One-pass estimator


@dataclass
class BucketAudit:
    """Diagnostics for one sampled bucket, used by the tester soundness checks."""

    level: int
    eps: float
    n_a: int
    c_hat: float
    passed: bool
    member_rows: np.ndarray  # indices into the live set whose own bucket this is


def one_pass_estimate(
    stream: Stream,
    gamma: float | None = None,
    seed: int = 0,
    m: int | None = None,
    t_counters: int | None = None,
    tester_c: float = TESTER_THRESHOLD,
    fallback_capacity: int = FALLBACK_CAPACITY,
    backend: str = "exact",
    audit: list | None = None,
) -> EstimateReport:
    """One-pass dynamic-stream estimate; see the module docstring.

    gamma defaults to the face hash's own gap 10*d^1.5; larger values only
    shrink the counted neighborhoods.  audit, when a list is supplied, is
    filled with BucketAudit records for every sampled bucket.
    """
    t0 = time.perf_counter()
    _require_valid(stream)
    inst = stream.instance
    if backend not in ("exact", "linear"):
        raise ValueError(f"unknown backend {backend!r}")
    fh_probe = FaceHash(inst.d, 1.0)
    hash_gamma = fh_probe.gamma
    if gamma is None:
        gamma = hash_gamma
    if gamma < hash_gamma * (1 - 1e-9):
        raise ValueError(
            f"gamma {gamma} below the face hash gap {hash_gamma}; consistency would break"
        )
    if t_counters is None:
        t_counters = default_t_counters(inst)
    if m is None:
        m = default_m_queries(inst, gamma)

    live = stream.live_points()
    n_live = live.shape[0]
    config = {
        "gamma": gamma, "m": m, "t_counters": t_counters, "tester_c": tester_c,
        "fallback_capacity": fallback_capacity, "backend": backend,
    }

    # Fallback branch: try exact recovery of the whole point set.
    recovered = _fallback_recover(stream, fallback_capacity, seed, backend)
    if recovered is not None:
        if recovered.shape[0] == 0:
            est = 0.0
        else:
            mp = oracle.mp_facilities(recovered, inst.f)
            est = mp.cost
        return EstimateReport(
            algo="one-pass", estimate=est, fallback_used=True, seed=seed,
            config=config, samples_drawn=0,
            timing={"wall_time_s": time.perf_counter() - t0},
        )

    if backend == "linear":
        report = _one_pass_linear(stream, gamma, seed, m, t_counters, tester_c, config)
        report.timing = {"wall_time_s": time.perf_counter() - t0}
        return report

    # Exact backend, vectorized from the net live set (state is linear in the
    # stream, so the net set determines it).
    keys = prf.point_keys(live) if n_live else np.empty(0, np.uint64)
    max_levels = np.zeros((t_counters + 1, n_live), dtype=np.int64)
    for t in range(t_counters + 1):
        if n_live:
            max_levels[t] = prf.max_survival_level(keys, prf.fold(seed, 0x5B, t))
    point_top = max_levels.max(axis=0) if n_live else np.empty(0, np.int64)
    top_level = int(min(point_top.max(), inst.levels)) if n_live else -1

    per_level: dict[int, float] = {}
    space = 0
    for i in range(0, top_level + 1):
        act = np.nonzero(point_top >= i)[0]
        if act.size == 0:
            continue
        fh = FaceHash(inst.d, level_ell(inst, i))
        eps_i = fh.eps
        e_pt, e_ids = fh.enlarged_ids(live[act].astype(np.float64), eps_i / 2.0)
        e_pt_global = act[e_pt]
        own_rows = np.arange(act.size)  # enlarged_ids lists own buckets first
        surv = max_levels[:, e_pt_global] >= i  # (T+1, n_edges)
        surv0_own = max_levels[0, act] >= i
        contrib = surv[1:].any(axis=0)
        contrib[own_rows] |= surv0_own
        if not contrib.any():
            continue
        voids = _void_rows(e_ids)
        keep = np.nonzero(contrib)[0]
        uniq, inv_all = np.unique(voids, return_inverse=True)
        kept_buckets = np.unique(inv_all[keep])
        remap = -np.ones(uniq.shape[0], dtype=np.int64)
        remap[kept_buckets] = np.arange(kept_buckets.size)
        nb = int(kept_buckets.size)
        edge_bucket = remap[inv_all]
        freq = np.zeros(nb, dtype=np.int64)
        own_ok = surv0_own & (edge_bucket[own_rows] >= 0)
        np.add.at(freq, edge_bucket[own_rows[own_ok]], 1)
        counters = np.zeros((nb, t_counters), dtype=np.int64)
        valid_edge = edge_bucket >= 0
        for t in range(1, t_counters + 1):
            em = surv[t] & valid_edge
            if em.any():
                np.add.at(counters[:, t - 1], edge_bucket[em], 1)
        c_hat = np.median(counters, axis=1)
        space += nb * (t_counters + 2) * 8
        rng = np.random.default_rng(prf.fold(seed, 0x9E, i))
        draws = rng.integers(0, nb, size=m)
        passing = (freq[draws] > 0) & (c_hat[draws] <= tester_c)
        z_i = float(np.where(passing, nb * freq[draws] * inst.f, 0.0).mean())
        per_level[i] = z_i
        if audit is not None:
            own_bucket_of = {}
            for row in own_rows:
                own_bucket_of.setdefault(int(edge_bucket[row]), []).append(int(act[row]))
            for b in np.unique(draws):
                members = np.array(own_bucket_of.get(int(b), []), dtype=np.int64)
                audit.append(
                    BucketAudit(i, eps_i, int(freq[b]), float(c_hat[b]),
                                bool(c_hat[b] <= tester_c), members)
                )

    estimate = float(sum(per_level.values()))
    return EstimateReport(
        algo="one-pass", estimate=estimate, per_level=per_level,
        samples_drawn=m * max(0, len(per_level)), seed=seed, config=config,
        space_bytes=space, timing={"wall_time_s": time.perf_counter() - t0},
    )


def _fallback_recover(stream: Stream, capacity: int, seed: int,
                      backend: str) -> np.ndarray | None:
    """Exact point-set recovery when the support fits the configured capacity."""
    inst = stream.instance
    if backend == "exact":
        live = stream.live_points()
        return live if live.shape[0] <= capacity else None
    codec = _PointCodec(inst)
    sk = SparseRecovery(capacity, prf.fold(seed, 0xFA11))
    for sign, row in zip(stream.signs, stream.points):
        sk.update(codec.encode(tuple(int(c) for c in row)), int(sign))
    decoded = sk.decode()
    if decoded is None:
        return None
    if not decoded:
        return np.empty((0, inst.d), dtype=np.int64)
    return np.array([codec.decode(x) for x in decoded], dtype=np.int64)


def _one_pass_linear(stream: Stream, gamma: float, seed: int, m: int,
                     t_counters: int, tester_c: float, config: dict) -> EstimateReport:
    """Real-sketch one-pass path; practical only at smoke-test scale."""
    inst = stream.instance
    n_up = len(stream)
    top_guess = sampling_level_count(inst, max(stream.insertion_count, 1)) + 4
    top_level = min(inst.levels, top_guess)
    hashes = [FaceHash(inst.d, level_ell(inst, i)) for i in range(top_level + 1)]
    sketches = [
        [L0WithData(L0Params(20, cells=8, reps=6), t_counters,
                    prf.fold(seed, 0x09, i, j))
         for j in range(m)]
        for i in range(top_level + 1)
    ]
    counts = [DistinctCounter(prf.fold(seed, 0xDC, i)) for i in range(top_level + 1)]
    for sign, row in zip(stream.signs, stream.points):
        pt = tuple(int(c) for c in row)
        key = prf.scalar_point_key(pt)
        x = np.asarray(pt, dtype=np.float64)
        for i in range(top_level + 1):
            fh = hashes[i]
            surv = [
                prf.mix64(key ^ prf.mix64(prf.fold(seed, 0x5B, t))) < (1 << (64 - i))
                if i > 0 else True
                for t in range(t_counters + 1)
            ]
            if not any(surv):
                continue
            own = _bucket_to_int(fh.hash_batch(x[None, :])[0])
            enlarged = [
                _bucket_to_int(np.asarray(list(b), dtype=np.int64).tobytes())
                for b in fh.enlarged_buckets(x, fh.eps / 2.0)
            ]
            data_delta = [int(sign) if surv[t] else 0 for t in range(1, t_counters + 1)]
            touched = False
            for u in enlarged:
                freq_d = int(sign) if (surv[0] and u == own) else 0
                if freq_d or any(data_delta):
                    for j in range(m):
                        sketches[i][j].update(u, freq_d, data_delta)
                    counts[i].update(u, freq_d + sum(data_delta))
                    touched = True
            if surv[0] and own not in enlarged:
                for j in range(m):
                    sketches[i][j].update(own, int(sign))
                counts[i].update(own, int(sign))
    per_level: dict[int, float] = {}
    failures = 0
    space = sum(len(s.to_bytes()) for lvl in sketches for s in lvl)
    for i in range(top_level + 1):
        support = max(1.0, counts[i].estimate())
        z_sum, z_n = 0.0, 0
        for j in range(m):
            try:
                _, freq_j, data_j = sketches[i][j].query()
            except QueryEmpty:
                z_sum += 0.0
                z_n += 1
                continue
            except QueryFailed:
                failures += 1
                continue
            c_hat = float(np.median(np.asarray(data_j, dtype=np.float64)))
            z = support * freq_j * inst.f if (freq_j > 0 and c_hat <= tester_c) else 0.0
            z_sum += z
            z_n += 1
        if z_n:
            per_level[i] = z_sum / z_n
    total_queries = (top_level + 1) * m
    return EstimateReport(
        algo="one-pass", estimate=float(sum(per_level.values())),
        per_level=per_level, samples_drawn=total_queries, failures=failures,
        reliable=failures <= 0.2 * max(total_queries, 1), seed=seed,
        config=config, space_bytes=space,
    )
