"""Portable pseudo-random streams for reproducible dataset generation.

Everything that influences generated data or training order draws from a
xoshiro256** stream seeded through splitmix64.  The generator is specified
bit-for-bit so that a dataset built from a given seed is identical on every
platform and in every implementation of the same recipe, independent of any
host library's RNG.

Streams are split by purpose: ``derive_stream(seed, "features", bag_index)``
yields a stream decoupled from the one used for labels or masks, so adding a
draw to one stage never shifts any other stage.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit

_MASK = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def _splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def _xoshiro_next(s: list[int]) -> int:
    """One xoshiro256** step; mutates the 4-word state, returns a u64."""
    out = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
    t = (s[1] << 17) & _MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return out


def _xoshiro_block_py(s: list[int], out: np.ndarray) -> None:
    for i in range(out.shape[0]):
        out[i] = _xoshiro_next(s)


def _xoshiro_block_loops(s, out):
    # s: uint64[4] state, mutated in place; out: uint64[m].
    # Same sequence as _xoshiro_next, compiled; uint64 arithmetic wraps.
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    five = np.uint64(5)
    nine = np.uint64(9)
    for i in range(out.shape[0]):
        x = s1 * five
        out[i] = ((x << np.uint64(7)) | (x >> np.uint64(57))) * nine
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3


if HAVE_NUMBA:
    _xoshiro_block_fast = njit(cache=True)(_xoshiro_block_loops)
else:  # pragma: no cover - exercised only without numba
    _xoshiro_block_fast = None


class Stream:
    """A single xoshiro256** stream with scalar and block draw helpers."""

    def __init__(self, seed: int):
        seed &= _MASK
        state = []
        x = seed
        for _ in range(4):
            x, word = _splitmix64(x)
            state.append(word)
        if not any(state):
            # xoshiro's all-zero state is a fixed point; unreachable from
            # splitmix64 expansion in practice, guarded anyway.
            state[0] = 1
        self._s = state
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        return _xoshiro_next(self._s)

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; pairs are cached.

        Uses numpy's log/cos/sin so the scalar and block paths share one
        libm and agree bit for bit (glibc's log differs by an ulp on some
        inputs).
        """
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # u1 in (0, 1] so log(u1) is finite.
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = float(np.sqrt(-2.0 * np.log(np.float64(u1))))
        theta = 2.0 * np.pi * u2
        self._spare_normal = r * float(np.sin(np.float64(theta)))
        return r * float(np.cos(np.float64(theta)))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection; unbiased for any n ≥ 1."""
        if n < 1:
            raise ValueError(f"randint bound must be >= 1, got {n}")
        if n == 1:
            return 0
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def next_block(self, count: int) -> np.ndarray:
        """``count`` consecutive raw u64 draws as a uint64 array.

        Produces exactly the same sequence as ``count`` calls of
        ``next_u64``; the compiled path only changes the speed.
        """
        out = np.empty(count, dtype=np.uint64)
        if _xoshiro_block_fast is not None:
            state = np.array(self._s, dtype=np.uint64)
            _xoshiro_block_fast(state, out)
            self._s = [int(x) for x in state]
        else:
            _xoshiro_block_py(self._s, out)
        return out

    def uniforms(self, count: int) -> np.ndarray:
        """``count`` uniform [0, 1) draws, identical to repeated uniform()."""
        return np.ldexp((self.next_block(count) >> np.uint64(11)).astype(np.float64), -53)

    def normals(self, count: int) -> np.ndarray:
        """``count`` standard normals, identical to repeated normal().

        Box-Muller pairs are consumed in the same order as the scalar path,
        including the cached spare from an odd-length draw.
        """
        out = np.empty(count, dtype=np.float64)
        start = 0
        if count and self._spare_normal is not None:
            out[0] = self._spare_normal
            self._spare_normal = None
            start = 1
        need = count - start
        if need <= 0:
            return out
        pairs = (need + 1) // 2
        u = self.next_block(2 * pairs)
        u1 = np.ldexp((u[0::2] >> np.uint64(11)).astype(np.float64) + 1.0, -53)
        u2 = np.ldexp((u[1::2] >> np.uint64(11)).astype(np.float64), -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z0 = r * np.cos(theta)
        z1 = r * np.sin(theta)
        inter = np.empty(2 * pairs, dtype=np.float64)
        inter[0::2] = z0
        inter[1::2] = z1
        out[start:] = inter[:need]
        if need % 2 == 1:
            self._spare_normal = float(inter[need])
        return out


def derive_stream(seed: int, *labels: str | int) -> Stream:
    """Derive an independent sub-stream from a root seed and label path.

    Labels may be purpose strings ("mask", "labels", "features") or integer
    indices (bag number, epoch).  Each label is folded into the seed through
    the splitmix64 finalizer, so distinct paths give decorrelated streams.
    """
    x = seed & _MASK
    for label in labels:
        if isinstance(label, int):
            h = label & _MASK
        else:
            h = fnv1a64(label.encode("utf-8"))
        _, x = _splitmix64(x ^ h)
    return Stream(x)
