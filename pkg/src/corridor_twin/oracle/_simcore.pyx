# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled point-queue simulation kernel.

Mirror of ``_simcore_py.run`` with identical floating-point semantics and
operation order, so both backends produce bit-identical results.  Keep the
two files in sync; the equivalence is enforced by tests.
"""

from libc.math cimport floor, fmod

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

DEF EB = 0
DEF WB = 1
DEF NB = 2
DEF SB = 3
DEF TURN_LEFT = 0
DEF TURN_THROUGH = 1
DEF TURN_RIGHT = 2
DEF EXIT_EAST = 1
DEF EXIT_WEST = 2
DEF EXIT_TURNED = 3

cdef int[8] KIND_FROM_PHASE = [EB, WB, EB, WB, NB, SB, NB, SB]
cdef int[4] THROUGH_PHASE = [0, 1, 4, 5]
cdef int[4] LEFT_PHASE = [2, 3, 6, 7]


cdef class _Sim:
    cdef double dt, warmup, interval_s, startup, sat_rate
    cdef Py_ssize_t k, w, n_mov, n_edges, V
    cdef double[:] cycle, offset, stopline_arr, entry_net_t, tau_edge
    cdef double[:, :] wstart, wend, turn_uniforms
    cdef double[:, :, :] turn_cdf
    cdef long long[:] appr_ptr, first_edge, pending_mov, pending_turn
    cdef double[:, :] qmax
    cdef long long[:] dep_veh, dep_mov
    cdef double[:] dep_t, dep_wait
    cdef long long[:] hop_veh, hop_edge, hop_mov
    cdef double[:] hop_entry, hop_dep
    cdef double[:] exit_t
    cdef long long[:] exit_code
    cdef long long[:] qhead, qtail, qlen, qnext, lhead, ltail
    cdef long long[:] was_active, hop_col, cur_hop, ptr
    cdef double[:] credit
    cdef long long[:, :] active
    cdef Py_ssize_t n_dep, n_hop

    cdef void open_hop(self, Py_ssize_t v, long long edge, double t_entry,
                       long long mov) noexcept:
        self.hop_veh[self.n_hop] = v
        self.hop_edge[self.n_hop] = edge
        self.hop_mov[self.n_hop] = mov
        self.hop_entry[self.n_hop] = t_entry
        self.hop_dep[self.n_hop] = -1.0
        self.cur_hop[v] = self.n_hop
        self.n_hop += 1

    cdef void route(self, Py_ssize_t v, Py_ssize_t node, int phase, double t_dep) noexcept:
        cdef int kind = KIND_FROM_PHASE[phase]
        cdef long long turn = self.pending_turn[v]
        cdef bint go_east, go_west, off
        cdef Py_ssize_t edge, down
        cdef int down_kind, nxt, phase_next
        cdef double u
        if kind == EB:
            go_east = turn == TURN_THROUGH
            go_west = False
            off = not go_east
        elif kind == WB:
            go_west = turn == TURN_THROUGH
            go_east = False
            off = not go_west
        elif kind == NB:
            go_east = turn == TURN_RIGHT
            go_west = turn == TURN_LEFT
            off = turn == TURN_THROUGH
        else:
            go_east = turn == TURN_LEFT
            go_west = turn == TURN_RIGHT
            off = turn == TURN_THROUGH
        if off:
            self.exit_t[v] = t_dep
            self.exit_code[v] = EXIT_TURNED
            return
        if go_east:
            if node == self.k - 1:
                self.exit_t[v] = t_dep
                self.exit_code[v] = EXIT_EAST
                return
            edge = 1 + node
            down = node + 1
            down_kind = EB
        else:
            if node == 0:
                self.exit_t[v] = t_dep
                self.exit_code[v] = EXIT_WEST
                return
            edge = 2 * self.k - node
            down = node - 1
            down_kind = WB
        u = self.turn_uniforms[v, self.hop_col[v]]
        self.hop_col[v] += 1
        if u < self.turn_cdf[down, down_kind, 0]:
            nxt = TURN_LEFT
        elif u < self.turn_cdf[down, down_kind, 1]:
            nxt = TURN_THROUGH
        else:
            nxt = TURN_RIGHT
        phase_next = LEFT_PHASE[down_kind] if nxt == TURN_LEFT else THROUGH_PHASE[down_kind]
        self.pending_mov[v] = down * 8 + phase_next
        self.pending_turn[v] = nxt
        self.stopline_arr[v] = t_dep + self.tau_edge[edge]
        self.open_hop(v, edge, t_dep, self.pending_mov[v])
        self.qnext[v] = -1
        if self.ltail[edge] < 0:
            self.lhead[edge] = v
        else:
            self.qnext[self.ltail[edge]] = v
        self.ltail[edge] = v

    cdef void depart(self, Py_ssize_t v, long long m, double t_dep, double wait) noexcept:
        cdef Py_ssize_t node = m // 8
        cdef int phase = <int>(m - node * 8)
        self.dep_veh[self.n_dep] = v
        self.dep_mov[self.n_dep] = m
        self.dep_t[self.n_dep] = t_dep
        self.dep_wait[self.n_dep] = wait
        self.n_dep += 1
        if self.cur_hop[v] >= 0:
            self.hop_dep[self.cur_hop[v]] = t_dep
            self.cur_hop[v] = -1
        self.route(v, node, phase, t_dep)

    cdef void join(self, Py_ssize_t v, double ft) noexcept:
        cdef long long m = self.pending_mov[v]
        cdef Py_ssize_t node = m // 8
        cdef Py_ssize_t group = (m - node * 8) // 2
        if self.active[node, group] == 1 and self.qlen[m] == 0:
            self.depart(v, m, self.stopline_arr[v], 0.0)
            return
        self.qnext[v] = -1
        if self.qtail[m] < 0:
            self.qhead[m] = v
        else:
            self.qnext[self.qtail[m]] = v
        self.qtail[m] = v
        self.qlen[m] += 1

    cdef run_loop(self, Py_ssize_t n_steps, Py_ssize_t n_appr):
        cdef Py_ssize_t step, i, a, p, end, v, nxt, j, m, e
        cdef int g, half
        cdef double ft, local
        cdef long long avail
        for step in range(n_steps):
            ft = step * self.dt

            for i in range(self.k):
                local = fmod(ft - self.offset[i], self.cycle[i])
                if local < 0.0:
                    local += self.cycle[i]
                for g in range(4):
                    if self.wstart[i, g] + self.startup <= local and local < self.wend[i, g]:
                        self.active[i, g] = 1
                    else:
                        self.active[i, g] = 0

            for a in range(n_appr):
                p = self.ptr[a]
                end = self.appr_ptr[a + 1]
                while p < end and self.stopline_arr[p] <= ft:
                    if self.first_edge[p] >= 0:
                        self.open_hop(p, self.first_edge[p], self.entry_net_t[p],
                                      self.pending_mov[p])
                    self.join(p, ft)
                    p += 1
                self.ptr[a] = p

            for e in range(self.n_edges):
                v = self.lhead[e]
                while v >= 0 and self.stopline_arr[v] <= ft:
                    nxt = self.qnext[v]
                    self.lhead[e] = nxt
                    if nxt < 0:
                        self.ltail[e] = -1
                    self.join(v, ft)
                    v = self.lhead[e]

            if ft >= self.warmup:
                j = <Py_ssize_t>floor((ft - self.warmup) / self.interval_s)
                if j < self.w:
                    for m in range(self.n_mov):
                        if self.qlen[m] > self.qmax[m, j]:
                            self.qmax[m, j] = self.qlen[m]

            for i in range(self.k):
                for g in range(4):
                    for half in range(2):
                        m = i * 8 + 2 * g + half
                        if self.active[i, g] == 1:
                            if self.was_active[m] == 0:
                                self.credit[m] = 0.0
                                self.was_active[m] = 1
                            self.credit[m] += self.sat_rate * self.dt
                            avail = <long long>floor(self.credit[m] + 1e-9)
                            while avail > 0 and self.qlen[m] > 0:
                                v = self.qhead[m]
                                self.qhead[m] = self.qnext[v]
                                if self.qhead[m] < 0:
                                    self.qtail[m] = -1
                                self.qlen[m] -= 1
                                self.credit[m] -= 1.0
                                avail -= 1
                                self.depart(v, m, ft, ft - self.stopline_arr[v])
                            if self.qlen[m] == 0 and self.credit[m] > 1.0:
                                self.credit[m] -= floor(self.credit[m])
                        else:
                            self.was_active[m] = 0
        return self.n_dep, self.n_hop


def run(n_steps, dt, warmup, interval_s, w, k,
        cycle, offset, wstart, wend, startup, sat_rate,
        appr_ptr, stopline_arr, entry_net_t, first_edge, pending_mov, pending_turn,
        turn_uniforms, turn_cdf, tau_edge,
        qmax, dep_veh, dep_mov, dep_t, dep_wait,
        hop_veh, hop_edge, hop_mov, hop_entry, hop_dep,
        exit_t, exit_code):
    """Same contract as ``_simcore_py.run``."""
    cdef _Sim s = _Sim()
    s.dt = dt
    s.warmup = warmup
    s.interval_s = interval_s
    s.startup = startup
    s.sat_rate = sat_rate
    s.k = k
    s.w = w
    s.n_mov = 8 * k
    s.n_edges = 2 * k
    s.V = stopline_arr.shape[0]
    s.cycle = np.ascontiguousarray(cycle, dtype=np.float64)
    s.offset = np.ascontiguousarray(offset, dtype=np.float64)
    s.wstart = np.ascontiguousarray(wstart, dtype=np.float64)
    s.wend = np.ascontiguousarray(wend, dtype=np.float64)
    s.appr_ptr = np.ascontiguousarray(appr_ptr, dtype=np.int64)
    s.stopline_arr = stopline_arr
    s.entry_net_t = np.ascontiguousarray(entry_net_t, dtype=np.float64)
    s.first_edge = np.ascontiguousarray(first_edge, dtype=np.int64)
    s.pending_mov = pending_mov
    s.pending_turn = pending_turn
    s.turn_uniforms = np.ascontiguousarray(turn_uniforms, dtype=np.float64)
    s.turn_cdf = np.ascontiguousarray(turn_cdf, dtype=np.float64)
    s.tau_edge = np.ascontiguousarray(tau_edge, dtype=np.float64)
    s.qmax = qmax
    s.dep_veh = dep_veh
    s.dep_mov = dep_mov
    s.dep_t = dep_t
    s.dep_wait = dep_wait
    s.hop_veh = hop_veh
    s.hop_edge = hop_edge
    s.hop_mov = hop_mov
    s.hop_entry = hop_entry
    s.hop_dep = hop_dep
    s.exit_t = exit_t
    s.exit_code = exit_code

    s.qhead = np.full(s.n_mov, -1, dtype=np.int64)
    s.qtail = np.full(s.n_mov, -1, dtype=np.int64)
    s.qlen = np.zeros(s.n_mov, dtype=np.int64)
    s.qnext = np.full(s.V, -1, dtype=np.int64)
    s.lhead = np.full(s.n_edges, -1, dtype=np.int64)
    s.ltail = np.full(s.n_edges, -1, dtype=np.int64)
    s.credit = np.zeros(s.n_mov, dtype=np.float64)
    s.was_active = np.zeros(s.n_mov, dtype=np.int64)
    s.active = np.zeros((s.k, 4), dtype=np.int64)
    s.hop_col = np.ones(s.V, dtype=np.int64)
    s.cur_hop = np.full(s.V, -1, dtype=np.int64)
    s.ptr = np.ascontiguousarray(appr_ptr, dtype=np.int64)[:-1].copy()
    s.n_dep = 0
    s.n_hop = 0
    return s.run_loop(n_steps, appr_ptr.shape[0] - 1)
