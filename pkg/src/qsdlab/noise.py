"""Seeded complex Brownian increments with per-trajectory substreams.

The generator is counter-based (Philox4x64-10, the Random123 algorithm,
verified word-for-word against numpy's implementation), keyed by
(seed, stream_id) with the counter laid out as (word_index, step_index,
0, 0).  Every draw is therefore a pure function of (seed, stream_id,
step); trajectories can run in any order, in any number of workers, and
reproduce byte-identical increments.

Gaussians come from a fixed inverse-transform: each 64-bit word w maps to
the open-interval uniform u = ((w >> 11) + 0.5) * 2^-53 and then to
ndtri(u).  This choice is frozen so golden outputs stay stable.

Variance convention: a complex increment dB = sqrt(dt) * (z_re + i z_im)
with independent standard normal z's, so Var(Re dB) = Var(Im dB) = dt and
E|dB|^2 = 2 dt.  Note the factor 2: the Ito table used throughout is
dB_k dB_l* = 2 delta_kl dt (and dB_k dB_l = 0), which is twice the
variance many references assign to complex noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "NoiseStream",
    "ComplexIncrementBlock",
    "substream",
    "sample_increments",
    "step_block",
    "coarse_step_block",
    "dump_increments",
    "load_increments",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_MASK64 = (1 << 64) - 1


def _mulhilo(a: np.uint64, b: np.ndarray):
    # 64x64 -> 128 bit product as (high word, low word); b is a uint64 array.
    lo = a * b
    a_hi, a_lo = a >> _S32, a & _MASK32
    b_hi, b_lo = b >> _S32, b & _MASK32
    t0 = a_lo * b_lo
    t1 = a_lo * b_hi
    t2 = a_hi * b_lo
    carry = ((t0 >> _S32) + (t1 & _MASK32) + (t2 & _MASK32)) >> _S32
    hi = a_hi * b_hi + (t1 >> _S32) + (t2 >> _S32) + carry
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0, k1) -> tuple[np.ndarray, ...]:
    """Philox4x64-10 block cipher: four 64-bit counter words and two key
    words in, four pseudorandom 64-bit words out.  Vectorized over numpy
    arrays of counters/keys."""
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = np.asarray(k0, dtype=np.uint64).copy()
    k1 = np.asarray(k1, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def _uniform_open(words: np.ndarray) -> np.ndarray:
    # 53-bit uniform strictly inside (0, 1); never hits 0 so ndtri is finite.
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _gaussian_words(seed: int, stream_ids: np.ndarray, step: int, count: int) -> np.ndarray:
    """Standard normals for one step: shape (len(stream_ids), count).

    Word j of step b for stream s comes from Philox counter (j, b, 0, 0)
    under key (seed, s); draws never collide across steps or streams.
    """
    n_streams = stream_ids.shape[0]
    j = np.arange(count, dtype=np.uint64)
    c0 = np.broadcast_to(j, (n_streams, count)).reshape(-1)
    c1 = np.full(n_streams * count, np.uint64(step & _MASK64), dtype=np.uint64)
    zero = np.zeros(n_streams * count, dtype=np.uint64)
    k0 = np.full(n_streams * count, np.uint64(seed & _MASK64), dtype=np.uint64)
    k1 = np.repeat(stream_ids.astype(np.uint64), count)
    out0, _, _, _ = philox4x64(c0, c1, zero, zero, k0, k1)
    return ndtri(_uniform_open(out0)).reshape(n_streams, count)


@dataclass
class NoiseStream:
    """Handle for one trajectory's increment sequence.  The counter is
    the step index; identical (seed, stream_id) reproduce identical
    sequences regardless of scheduling."""

    seed: int
    stream_id: int
    counter: int = 0


def substream(seed: int, trajectory_id: int) -> NoiseStream:
    """Independent stream for one trajectory; output depends only on
    (seed, trajectory_id)."""
    return NoiseStream(seed=int(seed), stream_id=int(trajectory_id), counter=0)


@dataclass(frozen=True)
class ComplexIncrementBlock:
    """One step's worth of complex Brownian increments for n channels."""

    n: int
    dt: float
    values: np.ndarray


def sample_increments(stream: NoiseStream, n: int, dt: float) -> ComplexIncrementBlock:
    """Draw the n complex increments for the stream's current step and
    advance its counter by one block."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n < 1:
        raise ValueError(f"channel count must be >= 1, got {n}")
    ids = np.array([stream.stream_id], dtype=np.uint64)
    z = _gaussian_words(stream.seed, ids, stream.counter, 2 * n)[0]
    stream.counter += 1
    values = np.sqrt(dt) * (z[0::2] + 1j * z[1::2])
    return ComplexIncrementBlock(n=n, dt=float(dt), values=values)


def step_block(seed: int, stream_ids, step: int, n: int, dt: float) -> np.ndarray:
    """Increments for one step across many streams at once: shape
    (len(stream_ids), n) complex.  Row i is bitwise identical to what
    substream(seed, stream_ids[i]) would produce at this step."""
    ids = np.asarray(stream_ids, dtype=np.uint64)
    z = _gaussian_words(seed, ids, step, 2 * n)
    return np.sqrt(dt) * (z[:, 0::2] + 1j * z[:, 1::2])


def coarse_step_block(
    seed: int, stream_ids, coarse_step: int, n: int, fine_dt: float, factor: int
) -> np.ndarray:
    """Increment over one coarse step of size factor*fine_dt, formed as the
    sum of the underlying fine-grid increments.  This is the Brownian-path
    coupling used by step-refinement studies: every dt level sees the same
    continuous path."""
    ids = np.asarray(stream_ids, dtype=np.uint64)
    total = np.zeros((ids.shape[0], n), dtype=complex)
    for j in range(factor):
        total += step_block(seed, ids, coarse_step * factor + j, n, fine_dt)
    return total


def dump_increments(path, seed: int, stream_id: int, n_steps: int, n: int, dt: float) -> None:
    """Write a stream's raw increments as little-endian float64 pairs
    [Re, Im] per channel per step, for replay and debugging."""
    ids = np.array([stream_id], dtype=np.uint64)
    out = np.empty((n_steps, n, 2), dtype="<f8")
    for step in range(n_steps):
        z = _gaussian_words(seed, ids, step, 2 * n)[0]
        vals = np.sqrt(dt) * (z[0::2] + 1j * z[1::2])
        out[step, :, 0] = vals.real
        out[step, :, 1] = vals.imag
    out.tofile(path)


def load_increments(path, n: int) -> np.ndarray:
    """Read increments written by dump_increments: (n_steps, n) complex."""
    raw = np.fromfile(path, dtype="<f8")
    if raw.size % (2 * n) != 0:
        raise ValueError("file size is not a whole number of steps")
    pairs = raw.reshape(-1, n, 2)
    return pairs[:, :, 0] + 1j * pairs[:, :, 1]
