"""Counter-based Gaussian deviates.

Every normal deviate is a pure function of ``(seed, step, index)``: the pair
``index // 2`` is hashed with a SplitMix64-style finalizer keyed by the seed
and the step, the 64-bit hash is split into two 32-bit uniforms, and the
Box-Muller transform turns them into two standard normals (even index takes
the cosine branch, odd index the sine branch).

Because nothing is sequential, any slice of particles can be generated in any
order, by any worker, and the values are identical.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S20 = np.uint64(20)
_LO32 = np.uint64(0xFFFFFFFF)
_ONE_BITS = np.uint64(0x3FF0000000000000)
_TWO_PI32 = np.float32(2.0 * np.pi)

# step tag reserved for initial-condition draws
INIT_STEP = -1


def _mix_scalar(z: int) -> int:
    z &= 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _mix_inplace(z: np.ndarray, tmp: np.ndarray) -> None:
    np.right_shift(z, _S30, out=tmp)
    np.bitwise_xor(z, tmp, out=z)
    np.multiply(z, _M1, out=z)
    np.right_shift(z, _S27, out=tmp)
    np.bitwise_xor(z, tmp, out=z)
    np.multiply(z, _M2, out=z)
    np.right_shift(z, _S31, out=tmp)
    np.bitwise_xor(z, tmp, out=z)


def stream_key(seed: int, step: int) -> int:
    """64-bit key for one step of one seeded stream."""
    k = _mix_scalar(int(seed) + 0x9E3779B97F4A7C15)
    return _mix_scalar(k ^ _mix_scalar((int(step) & 0xFFFFFFFFFFFFFFFF) * 0x9E3779B97F4A7C15 + 1))


def uniform_pairs(seed: int, step: int, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniforms (u1 in (0, 1], u2 in [0, 1), 32-bit resolution) for pair indices ``start .. start+count-1``."""
    key = np.uint64(stream_key(seed, step))
    z = np.arange(start, start + count, dtype=np.uint64)
    np.multiply(z, _GOLDEN, out=z)
    np.add(z, key, out=z)
    tmp = np.empty_like(z)
    _mix_inplace(z, tmp)
    # 32 random bits placed in the mantissa of a double in [1, 2)
    hi = np.right_shift(z, _S32)
    np.left_shift(hi, _S20, out=hi)
    np.bitwise_or(hi, _ONE_BITS, out=hi)
    np.bitwise_and(z, _LO32, out=z)
    np.left_shift(z, _S20, out=z)
    np.bitwise_or(z, _ONE_BITS, out=z)
    u1 = 2.0 - hi.view(np.float64)
    u2 = z.view(np.float64)
    u2 -= 1.0
    return u1, u2


def normals(seed: int, step: int, start: int, count: int) -> np.ndarray:
    """Standard normals for flat indices ``start .. start+count-1`` at ``step``."""
    if count <= 0:
        return np.empty(0)
    p0 = start // 2
    p1 = (start + count + 1) // 2
    u1, u2 = uniform_pairs(seed, step, p0, p1 - p0)
    r = np.log(u1)
    r *= -2.0
    np.sqrt(r, out=r)
    # angle factors in single precision; float64 trig is ~20x slower
    theta = u2.astype(np.float32)
    theta *= _TWO_PI32
    c = np.cos(theta).astype(np.float64)
    s = np.sin(theta).astype(np.float64)
    out = np.empty(2 * (p1 - p0))
    np.multiply(r, c, out=out[0::2])
    np.multiply(r, s, out=out[1::2])
    off = start - 2 * p0
    return out[off:off + count]


def normal_block(seed: int, step: int, first_particle: int, n_particles: int, dim: int) -> np.ndarray:
    """Deviates for a contiguous block of particles, shape ``(n_particles, dim)``."""
    return normals(seed, step, first_particle * dim, n_particles * dim).reshape(n_particles, dim)
