"""YCSB-style workload definitions and deterministic operation streams."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from ..errors import InvalidArgument

KEY_SPACE = 10 ** 9  # 13-byte keys: "user" + 9 digits
_KEY_MULT = 2654435761  # odd, not a multiple of 5, so i -> i*M+C is a bijection mod 10**9
_KEY_ADD = 104729

ZIPF_THETA = 0.99


def key_of(i: int) -> bytes:
    """The ``i``-th inserted record key; consecutive ``i`` land far apart in key order."""
    return b"user%09d" % ((i * _KEY_MULT + _KEY_ADD) % KEY_SPACE)


def zeta(n: int, theta: float, start: int = 0) -> float:
    """Sum of ``1 / i**theta`` for ``i`` in ``(start, n]``."""
    if n <= start:
        return 0.0
    total = 0.0
    chunk = 1 << 20
    for a in range(start + 1, n + 1, chunk):
        b = min(n, a + chunk - 1)
        total += float(np.sum(np.arange(a, b + 1, dtype=np.float64) ** -theta))
    return total


class Zipfian:
    """Zipfian ranks over ``[0, n)`` with rank 0 the most popular (Gray et al. generator)."""

    def __init__(self, n: int, rng: random.Random, theta: float = ZIPF_THETA):
        if n < 1:
            raise InvalidArgument("zipfian needs at least one item")
        self.rng = rng
        self.theta = theta
        self.alpha = 1.0 / (1.0 - theta)
        self.zeta2 = zeta(2, theta)
        self.n = 0
        self.zetan = 0.0
        self.grow(n)

    def grow(self, n: int) -> None:
        if n <= self.n:
            return
        self.zetan += zeta(n, self.theta, self.n)
        self.n = n
        self.eta = (1 - (2.0 / n) ** (1 - self.theta)) / (1 - self.zeta2 / self.zetan) if n > 1 else 0.0

    def p_top(self) -> float:
        return 1.0 / self.zetan

    def next(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


def _coprime_multiplier(n: int) -> int:
    a = 0x9E3779B1 % max(n, 2) or 1
    while math.gcd(a, n) != 1:
        a += 1
    return a


class ScrambledZipfian:
    """Zipfian popularity spread over the key space by a fixed permutation."""

    def __init__(self, n: int, rng: random.Random, theta: float = ZIPF_THETA):
        self.z = Zipfian(n, rng, theta)
        self.mult = _coprime_multiplier(n)
        self.n = n

    def next(self) -> int:
        return (self.z.next() * self.mult + 7) % self.n


class Latest:
    """Skewed towards the most recently inserted records."""

    def __init__(self, n: int, rng: random.Random, theta: float = ZIPF_THETA):
        self.z = Zipfian(n, rng, theta)

    def next(self, count: int) -> int:
        self.z.grow(count)
        return max(0, count - 1 - self.z.next())


class Uniform:
    def __init__(self, n: int, rng: random.Random):
        self.rng = rng
        self.n = n

    def next(self, count: Optional[int] = None) -> int:
        return self.rng.randrange(count or self.n)


@dataclass
class WorkloadSpec:
    name: str
    record_count: int
    op_count: int
    key_size: int = 13
    value_size: int = 16
    distribution: str = "zipfian"
    read_fraction: float = 0.0
    update_fraction: float = 0.0
    insert_fraction: float = 0.0
    scan_fraction: float = 0.0
    scan_len_max: int = 100

    def __post_init__(self):
        total = self.read_fraction + self.update_fraction + self.insert_fraction + self.scan_fraction
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgument(f"operation fractions sum to {total}, not 1")
        if self.distribution not in ("zipfian", "latest", "uniform"):
            raise InvalidArgument(f"unknown distribution {self.distribution!r}")
        if self.key_size != 13:
            raise InvalidArgument("keys are fixed at 13 bytes")

    @classmethod
    def preset(cls, name: str, record_count: int, op_count: int, value_size: int = 16) -> "WorkloadSpec":
        mixes = {
            "load": dict(insert_fraction=1.0, distribution="uniform"),
            "A": dict(read_fraction=0.5, update_fraction=0.5),
            "B": dict(read_fraction=0.95, update_fraction=0.05),
            "C": dict(read_fraction=1.0),
            "D": dict(read_fraction=0.95, insert_fraction=0.05, distribution="latest"),
            "E": dict(scan_fraction=0.95, insert_fraction=0.05),
        }
        if name not in mixes:
            raise InvalidArgument(f"unknown workload {name!r}; expected one of {', '.join(mixes)}")
        return cls(name, record_count, op_count, value_size=value_size, **mixes[name])


class Op(NamedTuple):
    kind: str  # read | update | insert | scan
    key: bytes
    value: Optional[bytes] = None
    scan_len: int = 0


class OpGenerator:
    """Reproducible operation stream for ``spec``; inserts extend the key sequence."""

    def __init__(self, spec: WorkloadSpec, seed: int = 0):
        self.spec = spec
        self.rng = random.Random(seed)
        self.inserted = spec.record_count
        n = max(spec.record_count, 1)
        if spec.distribution == "zipfian":
            self.chooser = ScrambledZipfian(n, self.rng)
        elif spec.distribution == "latest":
            self.chooser = Latest(n, self.rng)
        else:
            self.chooser = Uniform(n, self.rng)
        s = spec
        self.cuts = (s.read_fraction, s.read_fraction + s.update_fraction,
                     s.read_fraction + s.update_fraction + s.insert_fraction)

    def _existing(self) -> int:
        c = self.chooser
        if isinstance(c, Latest):
            return c.next(self.inserted)
        return c.next()

    def value(self) -> bytes:
        return self.rng.randbytes(self.spec.value_size)

    def next_op(self) -> Op:
        u = self.rng.random()
        r, up, ins = self.cuts
        if u < r:
            return Op("read", key_of(self._existing()))
        if u < up:
            return Op("update", key_of(self._existing()), self.value())
        if u < ins:
            i = self.inserted
            self.inserted += 1
            return Op("insert", key_of(i), self.value())
        return Op("scan", key_of(self._existing()), None, self.rng.randint(1, self.spec.scan_len_max))

    def __iter__(self) -> Iterator[Op]:
        for _ in range(self.spec.op_count):
            yield self.next_op()


def gen_op(spec: WorkloadSpec, seed: int = 0) -> Iterator[Op]:
    return iter(OpGenerator(spec, seed))


def load_items(record_count: int, value_size: int, seed: int = 0) -> Iterator[tuple[bytes, bytes]]:
    """Sorted initial records ``key_of(0..record_count-1)`` with seeded random values."""
    rng = random.Random(seed ^ 0x5EED)
    for k in sorted(key_of(i) for i in range(record_count)):
        yield k, rng.randbytes(value_size)
