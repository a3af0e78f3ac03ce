# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: SplitMix64 streams, Gillespie hopping and the interval oracle.

Must stay draw-for-draw identical to ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp
from libc.stdint cimport uint64_t, int64_t, uint8_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _next(uint64_t* state) nogil:
    state[0] += GOLDEN
    return (_mix(state[0]) >> 11) * (1.0 / 9007199254740992.0)


def mix64(uint64_t z):
    return _mix(z)


def traj_seed(uint64_t master, uint64_t index):
    return _mix(_mix(master) + (index + 1) * GOLDEN)


def uniform_stream(uint64_t seed, Py_ssize_t n):
    cdef uint64_t st = seed
    out = np.empty(n)
    cdef double[:] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = _next(&st)
    return out


cdef class _Hopper:
    """Enabled-bond bookkeeping for one configuration."""
    cdef int64_t n, nb
    cdef int64_t[:] bf, bt, adj_ptr, adj
    cdef double[:] rate
    cdef double rmax, total
    cdef uint8_t[:] up
    cdef int64_t[:] enabled, pos
    cdef int64_t n_en

    def __init__(self, int64_t n, int64_t[:] bf, int64_t[:] bt, double[:] rate,
                 int64_t[:] adj_ptr, int64_t[:] adj):
        self.n = n
        self.nb = bf.shape[0]
        self.bf = bf
        self.bt = bt
        self.rate = rate
        self.adj_ptr = adj_ptr
        self.adj = adj
        self.rmax = 0.0
        cdef int64_t b
        for b in range(self.nb):
            if rate[b] > self.rmax:
                self.rmax = rate[b]
        self.enabled = np.empty(max(self.nb, 1), np.int64)
        self.pos = np.empty(max(self.nb, 1), np.int64)
        self.up = np.empty(n, np.uint8)

    cdef void load(self, uint8_t[:] cfg):
        cdef int64_t j, b
        for j in range(self.n):
            self.up[j] = cfg[j]
        self.n_en = 0
        self.total = 0.0
        for b in range(self.nb):
            self.pos[b] = -1
            self._update(b)

    cdef inline void _update(self, int64_t b):
        cdef bint on = self.up[self.bf[b]] == 1 and self.up[self.bt[b]] == 0 and self.rate[b] > 0
        cdef int64_t p, last
        if on and self.pos[b] < 0:
            self.pos[b] = self.n_en
            self.enabled[self.n_en] = b
            self.n_en += 1
            self.total += self.rate[b]
        elif not on and self.pos[b] >= 0:
            p = self.pos[b]
            last = self.enabled[self.n_en - 1]
            self.enabled[p] = last
            self.pos[last] = p
            self.pos[b] = -1
            self.n_en -= 1
            self.total -= self.rate[b]
            if self.n_en == 0:
                self.total = 0.0

    cdef int64_t step(self, uint64_t* st):
        """Pick an enabled bond with probability proportional to its rate and fire it."""
        cdef int64_t b
        cdef double u
        while True:
            u = _next(st)
            b = self.enabled[<int64_t>(u * self.n_en)]
            if self.rate[b] == self.rmax or _next(st) * self.rmax < self.rate[b]:
                break
        self.up[self.bf[b]] = 0
        self.up[self.bt[b]] = 1
        self._touch(self.bf[b])
        self._touch(self.bt[b])
        return b

    cdef inline void _touch(self, int64_t s):
        cdef int64_t k
        for k in range(self.adj_ptr[s], self.adj_ptr[s + 1]):
            self._update(self.adj[k])


def kmc_run(int64_t n, int64_t[:] bf, int64_t[:] bt, double[:] rate, int64_t[:] adj_ptr, int64_t[:] adj,
            uint8_t[:] cfg0, double t_max, uint64_t seed, double[:] sample_times, bint record_events):
    """Single trajectory. Returns (samples, event_times, event_bonds)."""
    cdef _Hopper h = _Hopper(n, bf, bt, rate, adj_ptr, adj)
    h.load(cfg0)
    cdef uint64_t st = seed
    cdef Py_ssize_t ns = sample_times.shape[0], k = 0, j
    samples = np.empty((ns, n), np.uint8)
    cdef uint8_t[:, :] sm = samples
    ev_t, ev_b = [], []
    cdef double t = 0.0, dt
    cdef int64_t b
    while True:
        if h.n_en == 0:
            dt = -1.0
        else:
            dt = -log(1.0 - _next(&st)) / h.total
        while k < ns and (dt < 0 or sample_times[k] < t + dt):
            for j in range(n):
                sm[k, j] = h.up[j]
            k += 1
        if dt < 0 or t + dt > t_max:
            break
        t += dt
        b = h.step(&st)
        if record_events:
            ev_t.append(t)
            ev_b.append(b)
    return samples, np.array(ev_t, float), np.array(ev_b, np.int64)


def kmc_ensemble(int64_t n, int64_t[:] bf, int64_t[:] bt, double[:] rate, int64_t[:] adj_ptr, int64_t[:] adj,
                 uint8_t[:] cfg0, bint random_init, int64_t n_traj, uint64_t master, double[:] sample_times,
                 bint keep_final):
    """Ensemble sums of up-site and enabled-bond indicators at the sample times."""
    cdef _Hopper h = _Hopper(n, bf, bt, rate, adj_ptr, adj)
    cdef Py_ssize_t ns = sample_times.shape[0], k, j, i
    cdef int64_t nb = bf.shape[0], b
    up_sum = np.zeros((ns, n), np.int64)
    bond_sum = np.zeros((ns, nb), np.int64)
    final = np.zeros((n_traj if keep_final else 0, n), np.uint8)
    cdef int64_t[:, :] us = up_sum
    cdef int64_t[:, :] bs = bond_sum
    cdef uint8_t[:, :] fin = final
    cdef uint8_t[:] cfg = np.empty(n, np.uint8)
    cdef uint64_t st
    cdef double t, dt, t_max = sample_times[ns - 1] if ns else 0.0
    for i in range(n_traj):
        st = _mix(_mix(master) + (<uint64_t>i + 1) * GOLDEN)
        for j in range(n):
            cfg[j] = (_next(&st) < 0.5) if random_init else cfg0[j]
        h.load(cfg)
        t = 0.0
        k = 0
        while True:
            if h.n_en == 0:
                dt = -1.0
            else:
                dt = -log(1.0 - _next(&st)) / h.total
            while k < ns and (dt < 0 or sample_times[k] < t + dt):
                for j in range(n):
                    us[k, j] += h.up[j]
                for b in range(nb):
                    bs[k, b] += h.pos[b] >= 0
                k += 1
            if dt < 0 or k >= ns:
                break
            t += dt
            h.step(&st)
        if keep_final:
            for j in range(n):
                fin[i, j] = h.up[j]
    return up_sum, bond_sum, final


def oracle_survival(double p_flip, int n_spins, int64_t n_intervals, int64_t n_samples, uint64_t master):
    """Count samples still in the initial nuclear state after each interval."""
    surv = np.zeros(n_intervals + 1, np.int64)
    cdef int64_t[:] sv = surv
    cdef int64_t i, s, m
    cdef uint64_t st
    cdef bint alive, enabling
    for s in range(n_samples):
        st = _mix(_mix(master) + (<uint64_t>s + 1) * GOLDEN)
        alive = True
        sv[0] += 1
        for i in range(1, n_intervals + 1):
            enabling = True
            for m in range(n_spins):
                if _next(&st) >= 0.5:
                    enabling = False
            if _next(&st) < p_flip and enabling:
                alive = False
            if alive:
                sv[i] += 1
    return surv
