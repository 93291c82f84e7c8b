"""Instance generators, the matching-parity gadget family, and the experiment
runner used to compare estimators against the offline oracle."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators, oracle
from .core import Stream, UflInstance, pairwise_sq_dists, validate_stream_arrays


@dataclass
class GeneratorSpec:
    kind: str  # uniform | clustered | example_hard | bhm
    n: int
    d: int = 2
    delta: int = 1024
    f: float = 1.0
    seed: int = 0
    order: str = "given"  # given | shuffled
    deletion_rate: float = 0.0
    params: dict = field(default_factory=dict)

    def describe(self) -> str:
        extra = f" del={self.deletion_rate}" if self.deletion_rate else ""
        return f"{self.kind}(n={self.n},d={self.d},delta={self.delta},f={self.f}{extra})"


class GenerationError(RuntimeError):
    pass


def _interleave(points: np.ndarray, instance: UflInstance, seed: int,
                order: str, deletion_rate: float) -> tuple[Stream, np.ndarray]:
    """Turn a final point set into a stream, optionally inserting-then-deleting
    a victim fraction; returns the stream and the surviving point rows."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    n_vic = int(round(deletion_rate * n))
    victims = rng.choice(n, size=n_vic, replace=False) if n_vic else np.array([], dtype=np.int64)
    vic_mask = np.zeros(n, dtype=bool)
    vic_mask[victims] = True
    events_sign: list[int] = []
    events_row: list[int] = []
    if order == "given" and n_vic == 0:
        sign = np.ones(n, dtype=np.int8)
        return Stream(instance, sign, points), points
    keys_ins = rng.random(n)
    keys_del = np.full(n, np.inf)
    if n_vic:
        # the delete key must exceed the insert key for a valid prefix
        pair = np.sort(rng.random((n_vic, 2)), axis=1)
        keys_ins[victims] = pair[:, 0]
        keys_del[victims] = pair[:, 1]
    if order == "given":
        keys_ins = np.arange(n, dtype=np.float64)
        keys_del = np.where(vic_mask, n + rng.permutation(n).astype(np.float64), np.inf)
    evs = [(keys_ins[i], 1, i) for i in range(n)]
    evs += [(keys_del[i], -1, i) for i in np.nonzero(vic_mask)[0]]
    evs.sort()
    for _, s, i in evs:
        events_sign.append(s)
        events_row.append(i)
    stream = Stream(
        instance,
        np.array(events_sign, dtype=np.int8),
        points[np.array(events_row, dtype=np.int64)],
    )
    survivors = points[~vic_mask]
    return stream, survivors


def gen_uniform(spec: GeneratorSpec) -> tuple[Stream, dict]:
    inst = UflInstance(spec.d, spec.delta, spec.f)
    rng = np.random.default_rng(spec.seed)
    if spec.n == 0:
        return Stream(inst, np.zeros(0, np.int8), np.empty((0, spec.d), np.int64)), {}
    if float(spec.delta) ** spec.d < spec.n:
        raise GenerationError(f"cannot place {spec.n} distinct points in the grid")
    seen: dict[bytes, None] = {}
    rows = []
    tries = 0
    while len(rows) < spec.n:
        batch = rng.integers(1, spec.delta + 1, size=(2 * spec.n, spec.d), dtype=np.int64)
        for r in batch:
            key = r.tobytes()
            if key not in seen:
                seen[key] = None
                rows.append(r)
                if len(rows) == spec.n:
                    break
        tries += 1
        if tries > 64:
            raise GenerationError("rejection sampling failed to find distinct points")
    pts = np.stack(rows)
    stream, live = _interleave(pts, inst, spec.seed + 1, spec.order, spec.deletion_rate)
    return stream, {"kind": "uniform", "final_points": live.shape[0]}


def gen_clustered(spec: GeneratorSpec) -> tuple[Stream, dict]:
    inst = UflInstance(spec.d, spec.delta, spec.f)
    rng = np.random.default_rng(spec.seed)
    k = int(spec.params.get("clusters", 5))
    radius = float(spec.params.get("radius", spec.delta / 100.0))
    if spec.n == 0:
        return Stream(inst, np.zeros(0, np.int8), np.empty((0, spec.d), np.int64)), {}
    centers = rng.integers(1, spec.delta + 1, size=(k, spec.d)).astype(np.float64)
    seen: dict[bytes, None] = {}
    rows = []
    tries = 0
    while len(rows) < spec.n and tries < 200 * spec.n:
        c = centers[rng.integers(k)]
        off = rng.normal(scale=radius / 2.0, size=spec.d)
        cand = np.clip(np.round(c + off), 1, spec.delta).astype(np.int64)
        key = cand.tobytes()
        if key not in seen:
            seen[key] = None
            rows.append(cand)
        tries += 1
    if len(rows) < spec.n:
        raise GenerationError("could not place distinct clustered points")
    pts = np.stack(rows)
    stream, live = _interleave(pts, inst, spec.seed + 1, spec.order, spec.deletion_rate)
    return stream, {"kind": "clustered", "clusters": k, "radius": radius,
                    "final_points": live.shape[0]}


# ---------------------------------------------------------------------------
# Hard two-scale instance: sqrt(n) isolated unit points plus a 1/n-scale blob


def gen_example_hard(spec: GeneratorSpec) -> tuple[Stream, dict]:
    """sqrt(n) points at pairwise distance >= 1 plus n - sqrt(n) points at
    pairwise distance about 1/n, one unit away; realized with random sign
    codewords in d = ceil(8 log2 n) and quantized so the rounding error stays
    below 1/(10n).  f is the grid-unit image of 1."""
    n = spec.n
    rs = int(round(math.sqrt(n)))
    if rs * rs != n or n < 4:
        raise GenerationError("n must be a perfect square >= 4")
    rng = np.random.default_rng(spec.seed)
    d = int(math.ceil(8 * math.log2(n)))
    sqrt_d = math.sqrt(d)
    delta = 1 << max(3, int(math.ceil(math.log2(20.0 * n * sqrt_d + 1))))
    scale = (delta - 1) / 4.0
    quant_bound = sqrt_d * (4.0 / (delta - 1)) / 2.0
    if quant_bound >= 1.0 / (10.0 * n):
        raise GenerationError(
            f"quantization too coarse; need delta > {20 * n * sqrt_d:.0f}"
        )

    def codewords(k: int) -> np.ndarray:
        return (rng.integers(0, 2, size=(k, d)) * 2 - 1).astype(np.float64) / sqrt_d

    p1 = codewords(rs)
    center = codewords(1)[0]
    blob_dirs = codewords(n - rs)
    p2 = center[None, :] + blob_dirs / (n * math.sqrt(2.0))
    raw = np.concatenate([p1, p2], axis=0)

    grid = np.round((raw + 2.0) / 4.0 * (delta - 1)).astype(np.int64) + 1
    uniq = np.unique(grid, axis=0)
    if uniq.shape[0] != n:
        raise GenerationError("quantized points collided; increase delta")

    # separation checks on the realized (quantized) geometry, in raw units
    back = (grid - 1).astype(np.float64) / (delta - 1) * 4.0 - 2.0
    d_p1 = np.sqrt(pairwise_sq_dists(back[:rs]))
    np.fill_diagonal(d_p1, np.inf)
    cross = np.sqrt(pairwise_sq_dists(back[rs:], back[:rs]))
    if d_p1.min() < 1.0 or cross.min() < 1.0:
        raise GenerationError(
            f"separation failed (min P1 {d_p1.min():.3f}, cross {cross.min():.3f}); "
            f"minimal feasible delta may be larger than {delta}"
        )

    inst = UflInstance(d, delta, float(scale))
    stream, live = _interleave(grid, inst, spec.seed + 1, spec.order, spec.deletion_rate)
    r_class = np.array(["p1"] * rs + ["p2"] * (n - rs))
    ann = {
        "kind": "example_hard",
        "n": n,
        "sqrt_n": rs,
        "d": d,
        "delta": delta,
        "scale": scale,
        "quant_bound": quant_bound,
        "r_class": r_class.tolist(),
        "final_points": live.shape[0],
    }
    return stream, ann


# ---------------------------------------------------------------------------
# Matching-parity gadget (the streaming lower-bound instance family)


@dataclass
class BhmInstance:
    n: int
    answer: str  # YES | NO
    bits: np.ndarray  # Alice's 2n bits
    matching: list  # n disjoint pairs covering [2n]
    parities: np.ndarray  # one bit per matched pair
    instance: UflInstance
    stream: Stream
    scale: int
    shift: int
    alice_centers: np.ndarray  # (2n, d) unperturbed grid float coords of s_i^{x_i}
    s_points: np.ndarray  # (2n, 2, d) grid float coords of s_i^b
    t_points: np.ndarray  # (n, 2, d) grid float coords of t^b for each pair
    perturb_slack: float  # total client displacement bound, unscaled units

    @property
    def f_unscaled(self) -> float:
        return self.instance.f / self.scale


def gen_bhm_instance(n: int, answer: str, seed: int = 0,
                     copies_per_block: int | None = None) -> BhmInstance:
    """Alice encodes 2n bits as heavy client blocks, Bob encodes matched parity
    bits as single clients; YES/NO instances differ by about 0.586n in cost."""
    if n < 1:
        raise GenerationError("n must be >= 1")
    if answer not in ("YES", "NO"):
        raise GenerationError("answer must be YES or NO")
    rng = np.random.default_rng(seed)
    d = 8 * n
    scale = 1 << 22
    shift = 4
    delta = 1 << 23
    f_grid = 2.0 * scale
    inst = UflInstance(d, delta, f_grid)
    copies = copies_per_block if copies_per_block is not None else 100 * n

    bits = rng.integers(0, 2, size=2 * n)
    perm = rng.permutation(2 * n)
    matching = [(int(perm[2 * k]), int(perm[2 * k + 1])) for k in range(n)]
    want = rng.integers(0, 2, size=n)  # placeholder, set below per answer
    parities = np.empty(n, dtype=np.int64)
    for k, (i, j) in enumerate(matching):
        xor = int(bits[i]) ^ int(bits[j])
        parities[k] = xor if answer == "YES" else 1 - xor
    del want

    def s_coord_rows() -> np.ndarray:
        rows = np.zeros((2 * n, 2, d))
        for i in range(2 * n):
            rows[i, 0, 4 * i + 0] = 1.0
            rows[i, 0, 4 * i + 1] = 1.0
            rows[i, 1, 4 * i + 2] = 1.0
            rows[i, 1, 4 * i + 3] = 1.0
        return rows

    s01 = s_coord_rows()
    t01 = np.zeros((n, 2, d))
    for k, (i, j) in enumerate(matching):
        w = int(parities[k])
        t01[k, 0, 4 * i + 0] = 1.0
        t01[k, 0, 4 * i + 1] = 1.0
        t01[k, 0, 4 * j + (2 - 2 * w)] = 1.0
        t01[k, 0, 4 * j + (3 - 2 * w)] = 1.0
        t01[k, 1, 4 * i + 2] = 1.0
        t01[k, 1, 4 * i + 3] = 1.0
        t01[k, 1, 4 * j + (2 * w)] = 1.0
        t01[k, 1, 4 * j + (2 * w + 1)] = 1.0

    to_grid = lambda base: base * scale + shift  # noqa: E731

    rows: list[np.ndarray] = []
    slack = 0.0
    seen: dict[bytes, None] = {}
    for i in range(2 * n):
        home = to_grid(s01[i, int(bits[i])])
        placed = 0
        while placed < copies:
            off = rng.integers(-1, 2, size=d)
            cand = np.round(home + off).astype(np.int64)
            key = cand.tobytes()
            if key in seen:
                continue
            seen[key] = None
            rows.append(cand)
            slack += math.sqrt(float(off @ off)) / scale
            placed += 1
    for k in range(n):
        for b in (0, 1):
            cand = np.round(to_grid(t01[k, b])).astype(np.int64)
            key = cand.tobytes()
            if key in seen:
                raise GenerationError("gadget collision")
            seen[key] = None
            rows.append(cand)
    pts = np.stack(rows)
    stream = Stream(inst, np.ones(pts.shape[0], dtype=np.int8), pts)
    if not validate_stream_arrays(stream).valid:
        raise GenerationError("generated gadget stream failed validation")
    home_centers = np.stack([to_grid(s01[i, int(bits[i])]) for i in range(2 * n)])
    return BhmInstance(
        n=n, answer=answer, bits=bits, matching=matching, parities=parities,
        instance=inst, stream=stream, scale=scale, shift=shift,
        alice_centers=home_centers, s_points=to_grid(s01), t_points=to_grid(t01),
        perturb_slack=slack,
    )


def bhm_candidate_set(inst: BhmInstance, max_median_size: int = 4) -> np.ndarray:
    """All s points, all t points, and coordinate-average medians of Bob-client
    subsets up to the given size."""
    cands = [inst.s_points.reshape(-1, inst.instance.d),
             inst.t_points.reshape(-1, inst.instance.d)]
    bob = inst.t_points.reshape(-1, inst.instance.d)
    medians = []
    for size in range(2, max_median_size + 1):
        for combo in itertools.combinations(range(bob.shape[0]), size):
            medians.append(bob[list(combo)].mean(axis=0))
    if medians:
        cands.append(np.stack(medians))
    return np.concatenate(cands, axis=0)


def bhm_candidate_opt(inst: BhmInstance, max_median_size: int = 4) -> dict:
    """Exact optimum over the candidate set, made tractable by two certified
    reductions: heavy blocks force their home facility open (each home's
    absence costs more than a full constructive solution), and a candidate
    whose best-case saving over home-routing is at most f can be closed
    without increasing cost.  Surviving candidates are enumerated exhaustively.
    """
    d = inst.instance.d
    f = inst.instance.f
    clients = inst.stream.live_points().astype(np.float64)
    cands = bhm_candidate_set(inst, max_median_size)
    homes = inst.alice_centers
    n_homes = homes.shape[0]
    all_c = np.concatenate([homes, cands], axis=0)
    dist = np.sqrt(pairwise_sq_dists(all_c, clients))  # (clients, candidates)
    home_d = dist[:, :n_homes].min(axis=1)

    # Constructive upper bound: homes plus a facility at every Bob location
    # (the t block sits right after the 4n s-candidates in bhm_candidate_set).
    n_t = 2 * inst.n
    ub_cols = list(range(n_homes)) + list(
        range(n_homes + 4 * inst.n, n_homes + 4 * inst.n + n_t)
    )
    upper = f * len(ub_cols) + float(dist[:, ub_cols].min(axis=1).sum())

    # Certify that every home is forced open: without a facility at block i,
    # its clients travel at least to the nearest candidate outside the block.
    per_block = clients.shape[0] - 2 * inst.n  # Alice client count
    copies = per_block // n_homes
    for i in range(n_homes):
        others = np.concatenate([all_c[:n_homes][np.arange(n_homes) != i],
                                 cands], axis=0)
        gaps = np.sqrt(pairwise_sq_dists(others, homes[i][None, :]))[0]
        gap = gaps[gaps > 0.1 * inst.scale].min()  # skip the block's own candidate
        if copies * (gap - 2e-6 * inst.scale) <= upper:
            raise AssertionError("home-forcing margin failed; instance too small")

    # Domination prune: closing candidate c and rerouting each of its clients
    # to its forced-open home, or to a freshly opened facility at the client's
    # own candidate location (cost f, invalid when that location IS c), can
    # only help when the total strict saving of c is below f.
    cand_dist = dist[:, n_homes:]
    own_loc = cand_dist < 1e-6 * inst.scale  # client sits at this candidate
    survivors = []
    for j in range(cands.shape[0]):
        col = cand_dist[:, j]
        alt = np.where(own_loc[:, j], home_d, np.minimum(home_d, f))
        saving = np.maximum(0.0, alt - col).sum()
        if saving >= f - 1e-6 * f:
            survivors.append(j)
    if len(survivors) > 22:
        raise AssertionError(f"{len(survivors)} surviving candidates; enumeration too large")

    base = home_d
    best = f * n_homes + float(base.sum())
    best_set: list[int] = []
    sub_d = dist[:, [n_homes + j for j in survivors]]
    for mask in range(1, 1 << len(survivors)):
        cols = [j for j in range(len(survivors)) if mask >> j & 1]
        cost = f * (n_homes + len(cols)) + float(
            np.minimum(base, sub_d[:, cols].min(axis=1)).sum()
        )
        if cost < best - 1e-12:
            best = cost
            best_set = [survivors[j] for j in cols]
    return {
        "cost_grid": best,
        "cost": best / inst.scale,
        "forced_homes": n_homes,
        "extra_facilities": best_set,
        "survivor_count": len(survivors),
        "upper_bound": upper / inst.scale,
        "perturb_slack": inst.perturb_slack,
    }


def reorder_stream(stream: Stream, seed: int) -> Stream:
    """Uniformly random permutation of an insertion-only stream."""
    if np.any(stream.signs < 0):
        raise GenerationError("reorder requires an insertion-only stream")
    perm = np.random.default_rng(seed).permutation(len(stream))
    return Stream(stream.instance, stream.signs[perm], stream.points[perm])


# ---------------------------------------------------------------------------
# Dispatch + experiment runner


def make_stream(spec: GeneratorSpec) -> tuple[Stream, dict]:
    if spec.kind == "uniform":
        return gen_uniform(spec)
    if spec.kind == "clustered":
        return gen_clustered(spec)
    if spec.kind == "example_hard":
        return gen_example_hard(spec)
    if spec.kind == "bhm":
        inst = gen_bhm_instance(spec.n, spec.params.get("answer", "NO"), spec.seed)
        return inst.stream, {"kind": "bhm", "answer": inst.answer,
                             "perturb_slack": inst.perturb_slack}
    raise GenerationError(f"unknown generator kind {spec.kind!r}")


def run_experiment(specs: list[GeneratorSpec], algos: list[str], seeds: list[int],
                   est_kwargs: dict | None = None) -> list[dict]:
    """Cross product of instances, algorithms and seeds; each row carries the
    estimate, the oracle proxies, their ratio, and resource numbers."""
    est_kwargs = dict(est_kwargs or {})
    rows = []
    for spec in specs:
        stream, ann = make_stream(spec)
        live = stream.live_points()
        if live.shape[0]:
            proxy = oracle.sum_rp(live, stream.instance.f)
            mp_cost = oracle.mp_facilities(live, stream.instance.f).cost
        else:
            proxy = 0.0
            mp_cost = 0.0
        for algo in algos:
            for seed in seeds:
                t0 = time.perf_counter()
                rep = _run_algo(algo, stream, seed, est_kwargs)
                wall = time.perf_counter() - t0
                ratio = rep.estimate / proxy if proxy > 0 else (
                    1.0 if rep.estimate == 0 else math.inf
                )
                rows.append({
                    "instance": spec.describe(),
                    "kind": spec.kind,
                    "algo": algo,
                    "seed": seed,
                    "estimate": rep.estimate,
                    "sum_rp": proxy,
                    "mp_cost": mp_cost,
                    "ratio": ratio,
                    "wall_time_s": wall,
                    "space_bytes": rep.space_bytes,
                    "reliable": rep.reliable,
                    "fallback": rep.fallback_used,
                })
    return rows


def _run_algo(algo: str, stream: Stream, seed: int, kwargs: dict):
    if algo == "two-pass":
        return estimators.two_pass_estimate(
            stream, m=kwargs.get("m"), seed=seed, trace=False,
            backend=kwargs.get("backend", "exact"))
    if algo == "random-order":
        return estimators.random_order_estimate(
            stream, m=kwargs.get("m"), seed=seed, trace=False,
            backend=kwargs.get("backend", "exact"))
    if algo == "one-pass":
        return estimators.one_pass_estimate(
            stream, gamma=kwargs.get("gamma"), seed=seed, m=kwargs.get("m_queries"),
            fallback_capacity=kwargs.get("fallback_capacity", estimators.FALLBACK_CAPACITY),
            backend=kwargs.get("backend", "exact"))
    if algo == "offline":
        live = stream.live_points()
        est = oracle.sum_rp(live, stream.instance.f) if live.shape[0] else 0.0
        return estimators.EstimateReport(algo="offline", estimate=est, seed=seed)
    raise ValueError(f"unknown algorithm {algo!r}")


def aggregate(rows: list[dict]) -> list[dict]:
    """Quantile summary per (instance, algo)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["instance"], r["algo"]), []).append(r)
    out = []
    for (instance, algo), grp in sorted(groups.items()):
        ratios = np.array([g["ratio"] for g in grp])
        out.append({
            "instance": instance,
            "algo": algo,
            "runs": len(grp),
            "ratio_q10": float(np.quantile(ratios, 0.1)),
            "ratio_median": float(np.quantile(ratios, 0.5)),
            "ratio_q90": float(np.quantile(ratios, 0.9)),
            "mean_wall_time_s": float(np.mean([g["wall_time_s"] for g in grp])),
            "mean_space_bytes": float(np.mean([g["space_bytes"] for g in grp])),
        })
    return out
