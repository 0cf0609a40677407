"""Seedable, counter-based random streams.

Every stream is a Philox4x64 generator keyed by a 256-bit seed. The draw
index (``counter``) counts raw 64-bit outputs, so positioning a stream at
any index is O(1). That is what lets a decoder reach the k-th proposal
sample without regenerating its predecessors.

Draw accounting, per output value:

* ``uniform``: 1 draw.
* ``exponential``: 1 draw (``-log1p(-U)``).
* ``standard_normal(n)``: ``2 * ceil(n / 2)`` draws (Box-Muller pairs, the
  spare of an odd tail is discarded).
* ``gamma_small`` / ``truncated_gamma01``: 2 draws per rejection round;
  variable, recorded exactly in ``counter``.
* ``sphere(d)``: ``2 * ceil(d / 2)`` draws; the degenerate-norm redraw uses a
  derived stream, so consumption stays fixed.

Cryptographic strength is not a goal.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0
_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter value


# Philox4x64-10 constants, as used by numpy.random.Philox
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)


@njit(cache=True)
def _mulhilo(a, b):
    lo32 = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    a_lo = a & lo32
    a_hi = a >> s32
    b_lo = b & lo32
    b_hi = b >> s32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> s32) + (lh & lo32) + (hl & lo32)
    hi = hh + (lh >> s32) + (hl >> s32) + (mid >> s32)
    return hi, a * b


@njit(cache=True)
def _philox_gather(key0, key1, lane0, lane1, index, out):
    """Raw outputs at draw positions ``index``, matching numpy's stream layout."""
    one = np.uint64(1)
    four = np.uint64(4)
    for n in range(index.shape[0]):
        i = index[n]
        # numpy bumps the counter before each block
        c0 = i // four + one
        c1 = np.uint64(0)
        c2 = lane0
        c3 = lane1
        k0 = key0
        k1 = key1
        for r in range(10):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        w = i % four
        if w == 0:
            out[n] = c0
        elif w == 1:
            out[n] = c1
        elif w == 2:
            out[n] = c2
        else:
            out[n] = c3


@dataclass(frozen=True)
class SharedSeed:
    """A 256-bit opaque seed.

    Bytes 0..15 key the Philox generator, bytes 16..31 occupy the upper half
    of its 256-bit counter, so distinct seeds index disjoint stream spaces.
    """

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != 32:
            raise ValueError("SharedSeed needs exactly 32 bytes")
        object.__setattr__(self, "value", bytes(self.value))

    @classmethod
    def from_hex(cls, text: str) -> "SharedSeed":
        text = text.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        if len(text) != 64:
            raise ValueError(f"seed must be 64 hex characters, got {len(text)}")
        return cls(bytes.fromhex(text))

    @classmethod
    def from_int(cls, seed: int) -> "SharedSeed":
        """Expand a 64-bit integer as SHA-256 of its 8-byte little-endian form."""
        if not 0 <= seed <= _MASK64:
            raise ValueError("integer seed must fit in 64 unsigned bits")
        return cls(hashlib.sha256(seed.to_bytes(8, "little")).digest())

    @classmethod
    def parse(cls, text) -> "SharedSeed":
        """Accept 64 hex characters or a decimal 64-bit integer."""
        if isinstance(text, SharedSeed):
            return text
        if isinstance(text, int):
            return cls.from_int(text)
        text = str(text).strip()
        if len(text) in (64, 66):
            return cls.from_hex(text)
        return cls.from_int(int(text, 10))

    @classmethod
    def random(cls) -> "SharedSeed":
        return cls(secrets.token_bytes(32))

    def derive(self, *labels) -> "SharedSeed":
        """Child seed keyed by ``labels`` (ints or strings)."""
        h = hashlib.sha256(b"ppr-derive" + self.value)
        for label in labels:
            data = str(label).encode()
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
        return SharedSeed(h.digest())

    def hex(self) -> str:
        return self.value.hex()


class SampleStream:
    """A single-owner sequence of uniform draws with O(1) jump-ahead."""

    def __init__(self, seed: SharedSeed | int | str, counter: int = 0):
        self.seed = SharedSeed.parse(seed)
        words = np.frombuffer(self.seed.value, dtype="<u8")
        self._key = words[:2].astype(np.uint64)
        self._lane = words[2:].astype(np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._counter = 0
        self._position(counter)

    def _position(self, index: int):
        block, offset = divmod(index, _BLOCK)
        state = self._bitgen.state
        state["state"]["counter"] = np.array(
            [block & _MASK64, block >> 64, self._lane[0], self._lane[1]], dtype=np.uint64
        )
        state["buffer_pos"] = _BLOCK
        state["has_uint32"] = 0
        self._bitgen.state = state
        if offset:
            self._bitgen.random_raw(offset)
        self._counter = index

    @property
    def counter(self) -> int:
        return self._counter

    def jump_to(self, index: int) -> "SampleStream":
        """Position so the next draw is draw number ``index`` (0-based)."""
        if index < self._counter:
            raise ValueError(f"cannot rewind stream from {self._counter} to {index}")
        if index != self._counter:
            self._position(index)
        return self

    def advance(self, n: int) -> "SampleStream":
        if n < 0:
            raise ValueError("advance needs n >= 0")
        return self.jump_to(self._counter + n)

    def copy(self) -> "SampleStream":
        return SampleStream(self.seed, self._counter)

    def raw(self, n: int) -> np.ndarray:
        out = self._bitgen.random_raw(n)
        self._counter += n
        return np.atleast_1d(out).astype(np.uint64, copy=False)

    def raw_at(self, index) -> np.ndarray:
        """Raw draws at absolute positions ``index``; the counter does not move."""
        idx = np.ascontiguousarray(index, dtype=np.uint64).reshape(-1)
        out = np.empty(idx.size, dtype=np.uint64)
        if idx.size:
            _philox_gather(self._key[0], self._key[1], self._lane[0], self._lane[1], idx, out)
        return out

    def uniform_at(self, index) -> np.ndarray:
        return (self.raw_at(index) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    # -- vectorised samplers -------------------------------------------------

    def uniform(self, n: int) -> np.ndarray:
        """``n`` uniforms on [0, 1) with 53-bit resolution."""
        if n == 0:
            return np.empty(0)
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def exponential(self, n: int) -> np.ndarray:
        return -np.log1p(-self.uniform(n))

    def standard_normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = radius * np.cos(angle)
        out[:, 1] = radius * np.sin(angle)
        return out.reshape(-1)[:n]

    def gamma_small(self, shape: float, n: int) -> np.ndarray:
        """Gamma(shape, 1) for 0 < shape < 1 (Ahrens-Dieter GS rejection)."""
        if not 0.0 < shape < 1.0:
            raise ValueError("gamma_small needs 0 < shape < 1")
        b = 1.0 + shape / math.e
        out = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            u = self.uniform(2 * todo.size).reshape(todo.size, 2)
            p = b * u[:, 0]
            low = p <= 1.0
            with np.errstate(divide="ignore"):
                x = np.where(low, p ** (1.0 / shape), -np.log(np.maximum(b - p, 1e-300) / shape))
                accept = np.where(low, u[:, 1] <= np.exp(-x), u[:, 1] <= x ** (shape - 1.0))
            # underflow to 0 would leave the support
            accept &= x > 0.0
            out[todo[accept]] = x[accept]
            todo = todo[~accept]
        return out

    def truncated_gamma01(self, shape: float, n: int) -> np.ndarray:
        """Gamma(shape, 1) conditioned on (0, 1], by redrawing until <= 1."""
        out = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            v = self.gamma_small(shape, todo.size)
            ok = v <= 1.0
            out[todo[ok]] = v[ok]
            todo = todo[~ok]
        return out

    def isotropic_gaussian(self, d: int, variance: float, count: int = 1) -> np.ndarray:
        """``count`` rows of N(0, variance I_d); rows are drawn one after another."""
        u = self.uniform(draws_for_gaussian(d) * count).reshape(count, -1)
        return normals_from_uniforms(u, d) * math.sqrt(variance)

    def sphere(self, d: int, radius: float, count: int = 1) -> np.ndarray:
        """``count`` uniform points on the sphere of the given radius in R^d."""
        per_row = draws_for_gaussian(d)
        starts = self._counter + per_row * np.arange(count)
        u = self.uniform(per_row * count).reshape(count, per_row)
        return sphere_from_uniforms(u, d, radius, self.seed, starts)


def normals_from_uniforms(u: np.ndarray, d: int) -> np.ndarray:
    """Box-Muller on rows of ``2 * ceil(d / 2)`` uniforms, giving rows of d normals."""
    count = u.shape[0]
    u = u.reshape(count, -1, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[..., 0]))
    angle = 2.0 * np.pi * u[..., 1]
    z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    return z.reshape(count, -1)[:, :d]


def sphere_from_uniforms(u, d: int, radius: float, seed: SharedSeed, starts) -> np.ndarray:
    """Normalised Gaussian rows; ``starts`` are the rows' draw positions.

    A row whose norm underflows is redrawn from a stream derived from its
    position, so the main stream's consumption stays fixed.
    """
    g = normals_from_uniforms(u, d)
    norms = np.linalg.norm(g, axis=1)
    for i in np.flatnonzero(norms < 1e-300):
        aux = SampleStream(seed.derive("sphere-guard", int(starts[i])))
        while True:
            row = aux.isotropic_gaussian(d, 1.0)[0]
            nrm = np.linalg.norm(row)
            if nrm >= 1e-300:
                g[i], norms[i] = row, nrm
                break
    return g * (radius / norms)[:, None]


def draws_for_gaussian(d: int) -> int:
    """Draws consumed by one N(0, v I_d) or sphere sample."""
    return 2 * ((d + 1) // 2)


# Scalar front ends -----------------------------------------------------------

def sample_unif01(stream: SampleStream) -> float:
    return float(stream.uniform(1)[0])


def sample_exp1(stream: SampleStream) -> float:
    return float(stream.exponential(1)[0])


def sample_truncated_gamma01(stream: SampleStream, shape: float) -> float:
    if not 0.0 < shape < 1.0:
        raise ValueError("shape must lie in (0, 1)")
    return float(stream.truncated_gamma01(shape, 1)[0])


def sample_std_normal(stream: SampleStream) -> float:
    """One N(0, 1) value; consumes 2 draws."""
    return float(stream.standard_normal(1)[0])


def sample_isotropic_gaussian(stream: SampleStream, d: int, variance: float) -> np.ndarray:
    if d < 1 or variance <= 0:
        raise ValueError("need d >= 1 and variance > 0")
    return stream.isotropic_gaussian(d, variance)[0]


def sample_sphere(stream: SampleStream, d: int, radius: float) -> np.ndarray:
    if d < 1 or radius <= 0:
        raise ValueError("need d >= 1 and radius > 0")
    return stream.sphere(d, radius)[0]


def jump_to(stream: SampleStream, k: int) -> SampleStream:
    return stream.jump_to(k)
