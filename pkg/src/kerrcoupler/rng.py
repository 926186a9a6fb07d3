"""Counter-based Gaussian noise: Philox4x64-10 plus Box-Muller.

Every stochastic increment is a pure function of ``(seed, trajectory, step)``:
the key is ``(seed, trajectory)`` and the 256-bit counter is
``(step, stream, 0, 0)``.  One Philox block yields four 64-bit words and hence
exactly the four normals needed per integration step, so no generator state is
carried between steps and any partitioning of trajectories over workers sees
the same numbers.

The block function matches ``numpy.random.Philox`` bit for bit (numpy
increments its counter before each block, so its block ``c + 1`` is ours at
counter ``c``).
"""
import math

import numpy as np
from numba import njit

MASK32 = np.uint64(0xFFFFFFFF)
SH32 = np.uint64(32)
SH11 = np.uint64(11)
M0 = np.uint64(0xD2E7470EE14C6C93)
M1 = np.uint64(0xCA5A826395121157)
W0 = np.uint64(0x9E3779B97F4A7C15)
W1 = np.uint64(0xBB67AE8584CAA73B)
TWO_M53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & MASK32
    a_hi = a >> SH32
    b_lo = b & MASK32
    b_hi = b >> SH32
    ll = a_lo * b_lo
    hl = a_hi * b_lo
    lh = a_lo * b_hi
    hh = a_hi * b_hi
    cross = (ll >> SH32) + (hl & MASK32) + lh
    hi = hh + (hl >> SH32) + (cross >> SH32)
    return hi, lo


@njit(cache=True, nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on one 256-bit counter block."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(M0, c0)
        hi1, lo1 = _mulhilo(M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + W0
        k1 = k1 + W1
    return c0, c1, c2, c3


@njit(cache=True, nogil=True)
def _box_muller(w0, w1):
    u1 = (float(w0 >> SH11) + 1.0) * TWO_M53  # (0, 1]
    u2 = float(w1 >> SH11) * TWO_M53  # [0, 1)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(TWO_PI * u2), r * math.sin(TWO_PI * u2)


@njit(cache=True, nogil=True)
def normals4(seed, traj, step, stream):
    """Four independent standard normals for one (seed, trajectory, step)."""
    w0, w1, w2, w3 = philox4x64(step, stream, np.uint64(0), np.uint64(0), seed, traj)
    z0, z1 = _box_muller(w0, w1)
    z2, z3 = _box_muller(w2, w3)
    return z0, z1, z2, z3


@njit(cache=True, nogil=True)
def _fill_normals(seed, traj, step0, n, stream, out):
    for i in range(n):
        z0, z1, z2, z3 = normals4(seed, traj, np.uint64(step0 + i), stream)
        out[i, 0] = z0
        out[i, 1] = z1
        out[i, 2] = z2
        out[i, 3] = z3


@njit(cache=True, nogil=True)
def _fill_blocks(c0_start, c1, k0, k1, n, out):
    for i in range(n):
        w = philox4x64(np.uint64(c0_start + i), c1, np.uint64(0), np.uint64(0), k0, k1)
        for j in range(4):
            out[i, j] = w[j]


def philox_blocks(key, counter_start, n, stream=0):
    """Raw Philox output for counters ``(counter_start + i, stream, 0, 0)``; shape (n, 4)."""
    out = np.empty((n, 4), dtype=np.uint64)
    _fill_blocks(np.uint64(counter_start), np.uint64(stream),
                 np.uint64(key[0]), np.uint64(key[1]), n, out)
    return out


def normal_increments(seed, traj, n_steps, step0=0, stream=0):
    """Standard normals of shape (n_steps, 4) for one trajectory."""
    out = np.empty((n_steps, 4))
    _fill_normals(np.uint64(seed), np.uint64(traj), np.uint64(step0), n_steps, np.uint64(stream), out)
    return out
