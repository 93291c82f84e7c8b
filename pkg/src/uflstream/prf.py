"""Keyed pseudorandom values: scalar and vectorized splitmix64-style mixing.

All randomness in the package derives from 64-bit seeds through these
functions, so identical (config, seed) pairs reproduce bit-identical runs
across processes and platforms.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = (z + _GAMMA) & _M64
    z = ((z ^ (z >> 30)) * _MUL1) & _M64
    z = ((z ^ (z >> 27)) * _MUL2) & _M64
    return (z ^ (z >> 31)) & _M64


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += np.uint64(_GAMMA)
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MUL1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MUL2)
        z ^= z >> np.uint64(31)
    return z


def fold(seed: int, *values: int) -> int:
    """Combine a seed with integer tags/values into a fresh 64-bit value."""
    h = mix64(seed & _M64)
    for v in values:
        h = mix64((h ^ (v & _M64)) & _M64)
    return h


def derive_seed(seed: int, *tags) -> int:
    """Child seed from a master seed and a path of string/int tags."""
    h = mix64(seed & _M64)
    for tag in tags:
        if isinstance(tag, str):
            for b in tag.encode("utf-8"):
                h = mix64(h ^ b)
        else:
            h = mix64((h ^ (int(tag) & _M64)) & _M64)
    return h


def point_keys(points: np.ndarray, salt: int = 0) -> np.ndarray:
    """64-bit keys for the rows of an (n, d) integer array.

    Key depends only on the coordinate tuple (and salt), not on the row order.
    """
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim != 2:
        raise ValueError("points must be 2-D")
    h = np.full(pts.shape[0], mix64(salt) or 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for k in range(pts.shape[1]):
            col = pts[:, k].astype(np.uint64) + np.uint64(mix64(k + 1))
            h = mix64_np(h ^ mix64_np(col))
    return h


def uniform64(keys: np.ndarray, seed: int) -> np.ndarray:
    """Per-key uniform 64-bit values under the given seed."""
    with np.errstate(over="ignore"):
        return mix64_np(keys ^ np.uint64(mix64(seed)))


def uniform01(keys: np.ndarray, seed: int) -> np.ndarray:
    return uniform64(keys, seed).astype(np.float64) * (2.0**-64)


def subsample_mask(keys: np.ndarray, seed: int, level: int) -> np.ndarray:
    """Nested rate-2^-level membership: true iff the key's value < 2^(64-level).

    Membership is monotone in the level for a fixed seed, which is the
    standard coupling used inside distinct samplers; marginal rates are exact
    dyadics.  Levels >= 64 select nothing.
    """
    if level <= 0:
        return np.ones(keys.shape[0], dtype=bool)
    if level >= 64:
        return np.zeros(keys.shape[0], dtype=bool)
    return uniform64(keys, seed) < np.uint64(1 << (64 - level))


def bit_length_np(u: np.ndarray) -> np.ndarray:
    """Exact bit lengths of a uint64 array."""
    u = u.astype(np.uint64, copy=True)
    bl = np.zeros(u.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        m = u >= np.uint64(1 << s)
        bl[m] += s
        u[m] >>= np.uint64(s)
    bl += (u > 0).astype(np.int64)
    return bl


def max_survival_level(keys: np.ndarray, seed: int) -> np.ndarray:
    """Largest level at which each key survives the nested subsampling.

    u < 2^(64-i) iff i <= 64 - bit_length(u); u == 0 is capped at level 63 to
    match subsample_mask.
    """
    u = uniform64(keys, seed)
    return np.minimum(64 - bit_length_np(u), 63)


def scalar_point_key(point, salt: int = 0) -> int:
    h = mix64(salt) or 1
    for k, c in enumerate(point):
        h = mix64(h ^ mix64((int(c) + mix64(k + 1)) & _M64))
    return h
