"""Pure-Python twin of the compiled kernels (same draws, same results)."""

from __future__ import annotations

import math

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_SCALE = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def traj_seed(master: int, index: int) -> int:
    return mix64((mix64(master) + (index + 1) * GOLDEN) & MASK)


class _Stream:
    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = seed & MASK

    def next(self) -> float:
        self.state = (self.state + GOLDEN) & MASK
        return (mix64(self.state) >> 11) * _SCALE


def uniform_stream(seed: int, n: int) -> np.ndarray:
    st = _Stream(seed)
    return np.array([st.next() for _ in range(n)])


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class _Hopper:
    def __init__(self, n, bf, bt, rate, adj_ptr, adj):
        self.n, self.bf, self.bt, self.rate = n, list(bf), list(bt), list(rate)
        self.adj_ptr, self.adj = list(adj_ptr), list(adj)
        self.rmax = max(self.rate, default=0.0)
        self.rmax = max(self.rmax, 0.0)

    def load(self, cfg):
        self.up = [int(c) for c in cfg]
        self.enabled, self.pos = [], [-1] * len(self.bf)
        self.total = 0.0
        for b in range(len(self.bf)):
            self._update(b)

    def _update(self, b):
        on = self.up[self.bf[b]] == 1 and self.up[self.bt[b]] == 0 and self.rate[b] > 0
        if on and self.pos[b] < 0:
            self.pos[b] = len(self.enabled)
            self.enabled.append(b)
            self.total += self.rate[b]
        elif not on and self.pos[b] >= 0:
            p = self.pos[b]
            last = self.enabled[-1]
            self.enabled[p] = last
            self.pos[last] = p
            self.pos[b] = -1
            self.enabled.pop()
            self.total -= self.rate[b]
            if not self.enabled:
                self.total = 0.0

    def step(self, st: _Stream) -> int:
        while True:
            u = st.next()
            b = self.enabled[int(u * len(self.enabled))]
            if self.rate[b] == self.rmax or st.next() * self.rmax < self.rate[b]:
                break
        self.up[self.bf[b]] = 0
        self.up[self.bt[b]] = 1
        for s in (self.bf[b], self.bt[b]):
            for k in range(self.adj_ptr[s], self.adj_ptr[s + 1]):
                self._update(self.adj[k])
        return b


def kmc_run(n, bf, bt, rate, adj_ptr, adj, cfg0, t_max, seed, sample_times, record_events):
    h = _Hopper(n, bf, bt, rate, adj_ptr, adj)
    h.load(cfg0)
    st = _Stream(seed)
    ns = len(sample_times)
    samples = np.empty((ns, n), np.uint8)
    ev_t, ev_b = [], []
    t, k = 0.0, 0
    while True:
        dt = -1.0 if not h.enabled else -math.log(1.0 - st.next()) / h.total
        while k < ns and (dt < 0 or sample_times[k] < t + dt):
            samples[k] = h.up
            k += 1
        if dt < 0 or t + dt > t_max:
            break
        t += dt
        b = h.step(st)
        if record_events:
            ev_t.append(t)
            ev_b.append(b)
    return samples, np.array(ev_t, float), np.array(ev_b, np.int64)


def kmc_ensemble(n, bf, bt, rate, adj_ptr, adj, cfg0, random_init, n_traj, master, sample_times, keep_final):
    h = _Hopper(n, bf, bt, rate, adj_ptr, adj)
    ns, nb = len(sample_times), len(bf)
    up_sum = np.zeros((ns, n), np.int64)
    bond_sum = np.zeros((ns, nb), np.int64)
    final = np.zeros((n_traj if keep_final else 0, n), np.uint8)
    for i in range(n_traj):
        st = _Stream(traj_seed(master, i))
        cfg = [int(st.next() < 0.5) for _ in range(n)] if random_init else list(cfg0)
        h.load(cfg)
        t, k = 0.0, 0
        while True:
            dt = -1.0 if not h.enabled else -math.log(1.0 - st.next()) / h.total
            while k < ns and (dt < 0 or sample_times[k] < t + dt):
                up_sum[k] += h.up
                bond_sum[k] += np.array(h.pos) >= 0
                k += 1
            if dt < 0 or k >= ns:
                break
            t += dt
            h.step(st)
        if keep_final:
            final[i] = h.up
    return up_sum, bond_sum, final


def oracle_survival(p_flip, n_spins, n_intervals, n_samples, master):
    # counter-based draws: interval i uses draws (i-1)*(n_spins+1)+1 ... i*(n_spins+1)
    seeds = np.array([traj_seed(master, s) for s in range(n_samples)], dtype=np.uint64)
    per = n_spins + 1
    alive = np.ones(n_samples, bool)
    surv = np.zeros(n_intervals + 1, np.int64)
    surv[0] = n_samples
    for i in range(1, n_intervals + 1):
        k0 = (i - 1) * per
        draws = np.empty((per, n_samples))
        for m in range(per):
            with np.errstate(over="ignore"):
                state = seeds + np.uint64(((k0 + m + 1) * GOLDEN) & MASK)
            draws[m] = (_mix_vec(state) >> np.uint64(11)).astype(np.float64) * _SCALE
        enabling = np.all(draws[:n_spins] < 0.5, axis=0)
        alive &= ~(enabling & (draws[n_spins] < p_flip))
        surv[i] = alive.sum()
    return surv
