"""Seeded, truncated, two-sided cylindrical Wiener increments.

Increments are generated channel-by-channel from a counter-based RNG
(Philox) keyed by (seed, channel, side, block), so any (channel, interval)
query is reproducible in isolation, without stream contention and without
generating unused channels.  Time is discretized on a base lattice of step
``base_step``; queries must align with it.  Increments over multi-cell
steps are aggregated with a midpoint-recursive pairwise sum, which makes
dyadic refinement exact: the increments of an n-step query sum cell-for-cell
to those of the matching 2n-step query.
"""

from __future__ import annotations

import numpy as np

__all__ = ["WienerSampler", "NoiseBank", "coupled_pair"]

_BLOCK = 4096   # base increments generated per (channel, side, block) key


def _pairwise_sum(arr):
    """Sum over the last axis by recursive midpoint splitting.

    For even widths the split point is the midpoint, so the sum over a
    width-2m slice equals the fp sum of the sums over its two width-m
    halves exactly.
    """
    w = arr.shape[-1]
    if w == 1:
        return arr[..., 0]
    mid = w // 2
    return _pairwise_sum(arr[..., :mid]) + _pairwise_sum(arr[..., mid:])


class WienerSampler:
    """Truncated two-sided cylindrical Wiener process on a base time lattice.

    Each of ``n_channels`` scalar channels is an independent two-sided
    Brownian motion anchored at W(0) = 0; increments over base cells have
    variance ``base_step``.
    """

    def __init__(self, seed: int, n_channels: int, base_step: float):
        if n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not (base_step > 0):
            raise ValueError("base_step must be positive")
        self.seed = int(seed)
        self.n_channels = int(n_channels)
        self.base_step = float(base_step)

    # -- base-lattice plumbing ------------------------------------------

    def _cell_index(self, t: float) -> int:
        x = t / self.base_step
        j = round(x)
        if abs(x - j) > 1e-6:
            raise ValueError(
                f"time {t} is not on the base lattice (step {self.base_step})")
        return int(j)

    def _block(self, channel: int, side: int, block: int) -> np.ndarray:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(channel, side, block))
        gen = np.random.Generator(np.random.Philox(seed=ss))
        return gen.standard_normal(_BLOCK)

    def _base_normals(self, channel: int, j0: int, j1: int) -> np.ndarray:
        """Standard normals for base cells [j0, j1); j may be negative.

        Cell j >= 0 covers [j h, (j+1) h]; cell j < 0 covers the mirrored
        backward stream, keyed separately so W(0) = 0 splits the sides.
        """
        out = np.empty(j1 - j0)
        pos = 0
        j = j0
        while j < j1:
            if j < 0:
                side, idx = 1, -1 - j
            else:
                side, idx = 0, j
            b, off = divmod(idx, _BLOCK)
            blk = self._block(channel, side, b)
            if side == 0:
                take = min(j1, (b + 1) * _BLOCK) - j
                out[pos: pos + take] = blk[off: off + take]
            else:
                # backward stream runs toward -inf; fill one block slice
                take = min(j1, -(b * _BLOCK)) - j
                sl = blk[off - take + 1: off + 1][::-1] if take > 1 \
                    else blk[off: off + 1]
                out[pos: pos + take] = sl
            pos += take
            j += take
        return out

    def base_increments(self, channel: int, j0: int, j1: int) -> np.ndarray:
        """Brownian increments over base cells [j0, j1) for one channel."""
        return self._base_normals(channel, j0, j1) * np.sqrt(self.base_step)

    # -- public queries --------------------------------------------------

    def increments(self, t0: float, t1: float, n_steps: int) -> np.ndarray:
        """(n_channels, n_steps) Gaussian increments over [t0, t1].

        Each step spans (t1 - t0)/n_steps, which must be a whole number of
        base cells; increments have variance (t1 - t0)/n_steps.
        """
        if not t0 < t1:
            raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        j0 = self._cell_index(t0)
        j1 = self._cell_index(t1)
        span = j1 - j0
        if span % n_steps != 0:
            raise ValueError(
                f"[{t0}, {t1}] covers {span} base cells, "
                f"not divisible into {n_steps} steps")
        per = span // n_steps
        out = np.empty((self.n_channels, n_steps))
        for c in range(self.n_channels):
            base = self.base_increments(c, j0, j1)
            if per == 1:
                out[c] = base
            else:
                out[c] = _pairwise_sum(base.reshape(n_steps, per))
        return out

    def increment_table(self, j0: int, n_steps: int,
                        channels=None) -> np.ndarray:
        """(n_channels, n_steps) base-resolution increments from cell j0.

        Bulk accessor used by the integrator; ``channels`` restricts the
        generated rows (unused channels cost nothing).
        """
        chans = list(range(self.n_channels)) if channels is None \
            else list(channels)
        out = np.empty((len(chans), n_steps))
        for row, c in enumerate(chans):
            out[row] = self.base_increments(c, j0, j0 + n_steps)
        return out


def coupled_pair(sampler: WienerSampler):
    """Two views over the identical underlying increments.

    Integrating two systems against the two views drives them with the
    same Wiener path, so pathwise differences are estimable with strong
    variance reduction.
    """
    return sampler, sampler


class NoiseBank:
    """Per-path samplers derived from one base seed.

    Path index i always maps to the same Wiener path, so re-solving
    (e.g. pullback runs of increasing depth) sees a consistent path.
    """

    def __init__(self, base_seed: int, n_channels: int, base_step: float):
        self.base_seed = int(base_seed)
        self.n_channels = int(n_channels)
        self.base_step = float(base_step)
        self._cache: dict = {}

    def sampler(self, path_index: int) -> WienerSampler:
        if path_index not in self._cache:
            ss = np.random.SeedSequence(
                entropy=self.base_seed, spawn_key=(path_index,))
            seed = int(ss.generate_state(1, np.uint64)[0])
            self._cache[path_index] = WienerSampler(
                seed, self.n_channels, self.base_step)
        return self._cache[path_index]
