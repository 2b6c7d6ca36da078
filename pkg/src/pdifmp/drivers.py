"""Deterministic, seedable stochastic driver streams.

Each path owns four independent substreams, one per kind of randomness the
simulation consumes:

* ``poisson``  -- exponential waiting times between proposed jump times,
  generated by inverse CDF at a dominating rate fixed per stream;
* ``thinning`` -- the uniforms that accept or reject each proposal;
* ``kernel``   -- the uniforms that resample the mode (and, for models
  that rescale the continuous state at jumps, the jump magnitude);
* ``wiener``   -- Gaussian increments for the Brownian driver.

Substreams are realised as Philox counter-based generators keyed by
``(seed, path_id, substream)``, so a draw is a pure function of the seed,
the path, the substream and the draw index: replays are bitwise identical
on any thread count, forking a path stream is O(1), and draws from one
substream never perturb another.

Draw-order contract
-------------------
* Proposal waiting times: the k-th draw of the poisson substream is
  ``-log1p(-u_k) / rate``; cumulative sums give the proposal times.  The
  dominating rate is frozen at the first draw of a stream.
* Thinning uniforms are indexed by proposal number ``k = 1, 2, ...``.
* Kernel uniforms are allocated in pairs per proposal: slot
  ``2*(k-1)`` resamples the mode of an accepted proposal ``k`` and slot
  ``2*(k-1)+1`` feeds the optional jump-magnitude transform.  Rejected
  proposals leave their pair unused (the uniforms are still defined, so
  two consumers of one stream agree on every index even if their
  accept/reject decisions differ).
* Wiener increments are consumed in grid order, one per grid cell;
  requesting a block of n increments is identical to n scalar requests.

Indexed accessors (``proposal_time``, ``thinning_uniform``,
``kernel_uniform``) memoise, so coupled consumers reading the same stream
instance observe identical values at identical indices.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_MAX_PATH = 1 << 60

_SUB_POISSON = 0
_SUB_THINNING = 1
_SUB_KERNEL = 2
_SUB_WIENER = 3

_UNIFORM_SUBSTREAMS = {"thinning": _SUB_THINNING, "kernel": _SUB_KERNEL}

_ZERO4 = np.zeros(4, dtype=np.uint64)


def _substream_key(seed: int, path_id: int, substream: int) -> np.ndarray:
    return np.array([seed & _MASK64, ((path_id << 3) | substream) & _MASK64], dtype=np.uint64)


def _fresh_state(seed: int, path_id: int, substream: int) -> dict:
    # Equivalent to constructing Philox(key=...) but much cheaper, which
    # matters when millions of short paths are simulated; equality with
    # fresh construction is pinned by a test.
    return {
        "bit_generator": "Philox",
        "state": {"counter": _ZERO4.copy(), "key": _substream_key(seed, path_id, substream)},
        "buffer": _ZERO4.copy(),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }


class DriverStream:
    """Reproducible randomness for one simulated path.

    A stream instance must not be drawn from by two threads at once;
    parallelism is across paths, each owning its own stream.
    """

    __slots__ = (
        "seed",
        "path_id",
        "_gens",
        "_bitgens",
        "_states",
        "counters",
        "_proposal_rate",
        "_proposal_times",
        "_thinning_cache",
        "_kernel_cache",
    )

    def __init__(self, seed: int, path_id: int = 0) -> None:
        self._bitgens = [np.random.Philox(key=[0, 0]) for _ in range(4)]
        self._gens = [np.random.Generator(bg) for bg in self._bitgens]
        self._states = [_fresh_state(0, 0, sub) for sub in range(4)]
        self.reset(seed, path_id)

    def reset(self, seed: int, path_id: int) -> None:
        """Re-key the stream in place; equivalent to a fresh construction
        (the state setter copies, so the templates can be reused)."""
        if not 0 <= path_id < _MAX_PATH:
            raise ValueError(f"path_id must lie in [0, 2**60), got {path_id!r}")
        self.seed = int(seed)
        self.path_id = int(path_id)
        key_hi = (path_id << 3) & _MASK64
        for sub, (bg, st) in enumerate(zip(self._bitgens, self._states)):
            inner = st["state"]
            inner["counter"][:] = 0
            inner["key"][0] = seed & _MASK64
            inner["key"][1] = key_hi | sub
            bg.state = st
        self.counters = [0, 0, 0, 0]
        self._proposal_rate: float | None = None
        self._proposal_times: list[float] = []
        self._thinning_cache: list[float] = []
        self._kernel_cache: list[float] = []

    # -- poisson proposals -------------------------------------------------

    def next_proposal(self, rate_bound: float) -> float:
        """Next exponential waiting time of the dominating Poisson process."""
        if not rate_bound > 0.0:
            raise ValueError(f"rate_bound must be positive, got {rate_bound!r}")
        if self._proposal_rate is None:
            self._proposal_rate = float(rate_bound)
        elif rate_bound != self._proposal_rate:
            raise ValueError(
                f"stream already serves proposals at rate {self._proposal_rate!r}; got {rate_bound!r}"
            )
        gen = self._gens[_SUB_POISSON]
        inc = 0.0
        while inc == 0.0:  # u = 0 would stall the proposal clock
            u = gen.random()
            self.counters[_SUB_POISSON] += 1
            inc = -math.log1p(-u) / rate_bound
        prev = self._proposal_times[-1] if self._proposal_times else 0.0
        self._proposal_times.append(prev + inc)
        return inc

    def proposal_time(self, k: int, rate_bound: float) -> float:
        """The k-th proposed jump time (1-based), memoised."""
        if k < 1:
            raise ValueError(f"proposal index must be >= 1, got {k!r}")
        while len(self._proposal_times) < k:
            self.next_proposal(rate_bound)
        return self._proposal_times[k - 1]

    # -- uniforms -----------------------------------------------------------

    def next_uniform(self, which: str) -> float:
        """Sequential uniform on [0, 1) from the named substream."""
        try:
            sub = _UNIFORM_SUBSTREAMS[which]
        except KeyError:
            raise ValueError(f"unknown uniform substream {which!r}") from None
        cache = self._thinning_cache if sub == _SUB_THINNING else self._kernel_cache
        u = self._gens[sub].random()
        self.counters[sub] += 1
        cache.append(u)
        return u

    def thinning_uniform(self, k: int) -> float:
        """The acceptance uniform for proposal k (1-based), memoised."""
        if k < 1:
            raise ValueError(f"proposal index must be >= 1, got {k!r}")
        gen = self._gens[_SUB_THINNING]
        cache = self._thinning_cache
        while len(cache) < k:
            cache.append(gen.random())
            self.counters[_SUB_THINNING] += 1
        return cache[k - 1]

    def kernel_uniform(self, index: int) -> float:
        """The kernel uniform at flat slot ``index`` (0-based), memoised."""
        if index < 0:
            raise ValueError(f"kernel slot must be >= 0, got {index!r}")
        gen = self._gens[_SUB_KERNEL]
        cache = self._kernel_cache
        while len(cache) <= index:
            cache.append(gen.random())
            self.counters[_SUB_KERNEL] += 1
        return cache[index]

    def kernel_slots(self, proposal_k: int) -> tuple[float, float]:
        """(mode uniform, magnitude uniform) allocated to proposal k."""
        base = 2 * (proposal_k - 1)
        return self.kernel_uniform(base), self.kernel_uniform(base + 1)

    # -- wiener -------------------------------------------------------------

    def wiener_increment(self, h: float) -> float:
        """Gaussian increment with mean 0 and variance h; h = 0 draws nothing."""
        if h < 0.0:
            raise ValueError(f"step must be nonnegative, got {h!r}")
        if h == 0.0:
            return 0.0
        z = self._gens[_SUB_WIENER].standard_normal()
        self.counters[_SUB_WIENER] += 1
        return z * math.sqrt(h)

    def wiener_block(self, n: int, h: float) -> list[float]:
        """n increments for consecutive cells of width h, in grid order."""
        if n < 1:
            raise ValueError(f"block size must be >= 1, got {n!r}")
        if h < 0.0:
            raise ValueError(f"step must be nonnegative, got {h!r}")
        if h == 0.0:
            return [0.0] * n
        self.counters[_SUB_WIENER] += n
        block = self._gens[_SUB_WIENER].standard_normal(n)
        return (block * math.sqrt(h)).tolist()


def fork_for_path(seed: int, path_id: int) -> DriverStream:
    """Independent stream for one path; pure in (seed, path_id)."""
    return DriverStream(seed, path_id)
