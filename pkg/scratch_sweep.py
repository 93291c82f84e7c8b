"""Scratch: validate candidate acceptance instances across estimators/seeds."""
import sys
import time

import numpy as np

from uflstream import estimators, harness, oracle

MANIFEST = [
    ("uniform", 300, 2, 1024, 4.0, {}),
    ("uniform", 300, 2, 1024, 40.0, {}),
    ("uniform", 400, 2, 512, 20.0, {}),
    ("uniform", 300, 4, 1024, 100.0, {}),
    ("uniform", 400, 4, 256, 60.0, {}),
    ("uniform", 300, 8, 1024, 400.0, {}),
    ("uniform", 400, 8, 256, 150.0, {}),
    ("uniform", 300, 16, 1024, 900.0, {}),
    ("uniform", 250, 16, 256, 300.0, {}),
    ("uniform", 500, 3, 512, 15.0, {}),
    ("clustered", 300, 2, 1024, 15.0, {"clusters": 20, "radius": 20.0}),
    ("clustered", 300, 2, 1024, 80.0, {"clusters": 5, "radius": 150.0}),
    ("clustered", 400, 4, 1024, 80.0, {"clusters": 8, "radius": 100.0}),
    ("clustered", 400, 4, 1024, 40.0, {"clusters": 3, "radius": 100.0}),
    ("clustered", 300, 8, 1024, 500.0, {"clusters": 6, "radius": 200.0}),
    ("clustered", 500, 2, 512, 10.0, {"clusters": 30, "radius": 16.0}),
    ("clustered", 300, 16, 1024, 1500.0, {"clusters": 4, "radius": 400.0}),
    ("clustered", 400, 3, 256, 8.0, {"clusters": 25, "radius": 12.0}),
    ("clustered", 400, 6, 512, 100.0, {"clusters": 5, "radius": 120.0}),
    ("clustered", 250, 2, 4096, 30.0, {"clusters": 15, "radius": 60.0}),
]

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 8
t_start = time.perf_counter()
for idx, (kind, n, d, delta, f, params) in enumerate(MANIFEST):
    spec = harness.GeneratorSpec(kind, n, d=d, delta=delta, f=f, seed=1000 + idx,
                                 params=params)
    stream, _ = harness.make_stream(spec)
    live = stream.live_points()
    sr = oracle.sum_rp(live.astype(float), f)
    spec_del = harness.GeneratorSpec(kind, n, d=d, delta=delta, f=f, seed=1000 + idx,
                                     params=params, deletion_rate=0.2, order="shuffled")
    stream_del, _ = harness.make_stream(spec_del)
    live_del = stream_del.live_points()
    sr_del = oracle.sum_rp(live_del.astype(float), f)
    r2, rro, r1 = [], [], []
    for s in range(n_seeds):
        rep = estimators.two_pass_estimate(stream, m=192, seed=s, trace=False)
        r2.append(rep.estimate / sr)
        stream_ro = harness.reorder_stream(stream, 7000 + s)
        rep = estimators.random_order_estimate(stream_ro, m=192, seed=s, trace=False)
        rro.append(rep.estimate / sr)
        rep = estimators.one_pass_estimate(stream_del, seed=s, fallback_capacity=64, m=4096)
        r1.append(rep.estimate / sr_del)
    r2, rro, r1 = np.array(r2), np.array(rro), np.array(r1)
    ok2 = ((r2 >= 0.25) & (r2 <= 4)).mean()
    okro = ((rro >= 0.25) & (rro <= 4)).mean()
    gamma = 10 * d * np.sqrt(d)
    ok1 = ((r1 >= 1 / (4 * gamma)) & (r1 <= 4)).mean()
    flag = "" if min(ok2, okro, ok1) >= 0.99 else "  <-- CHECK"
    print(f"[{idx:2d}] {kind:9s} n={n} d={d:2d} f={f:6.0f}: "
          f"2p {r2.mean():.2f}({r2.min():.2f},{r2.max():.2f}) ok {ok2:.2f} | "
          f"ro {rro.mean():.2f}({rro.min():.2f},{rro.max():.2f}) ok {okro:.2f} | "
          f"1p {r1.mean():.2f}({r1.min():.2f},{r1.max():.2f}) ok {ok1:.2f}{flag}")
print("total", round(time.perf_counter() - t_start, 1), "s")
