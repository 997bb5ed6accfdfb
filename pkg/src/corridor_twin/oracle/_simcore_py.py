"""Pure-Python point-queue simulation kernel.

This is the fallback twin of the compiled kernel in ``_simcore.pyx``: the
same time-stepped loop, written so that every floating-point operation
happens in the same order with the same C semantics (math.fmod, not ``%``).
Results are bit-identical between the two backends.

State per movement is a FIFO of vehicles (linked through ``qnext``); links
carry in-transit FIFOs ordered by stopline-arrival time.  A vehicle that
reaches an empty stopline while its group is discharging passes unimpeded
at its exact arrival time; standing queues discharge at the saturation
rate, with a per-green credit accumulator.
"""

from math import floor, fmod

import numpy as np

BACKEND_NAME = "python"

# approach kinds / direction encodings shared with the driver
EB, WB, NB, SB = 0, 1, 2, 3
TURN_LEFT, TURN_THROUGH, TURN_RIGHT = 0, 1, 2
EXIT_NONE, EXIT_EAST, EXIT_WEST, EXIT_TURNED = 0, 1, 2, 3

_KIND_FROM_PHASE = (EB, WB, EB, WB, NB, SB, NB, SB)
_THROUGH_PHASE = (0, 1, 4, 5)  # through+right lane group per approach kind
_LEFT_PHASE = (2, 3, 6, 7)


def run(n_steps, dt, warmup, interval_s, w, k,
        cycle, offset, wstart, wend, startup, sat_rate,
        appr_ptr, stopline_arr, entry_net_t, first_edge, pending_mov, pending_turn,
        turn_uniforms, turn_cdf, tau_edge,
        qmax, dep_veh, dep_mov, dep_t, dep_wait,
        hop_veh, hop_edge, hop_mov, hop_entry, hop_dep,
        exit_t, exit_code):
    """Run the simulation; returns (n_departure_events, n_hop_rows).

    ``pending_mov`` / ``pending_turn`` / ``stopline_arr`` are consumed as
    mutable per-vehicle state and must be scratch copies.
    """
    V = stopline_arr.shape[0]
    n_appr = appr_ptr.shape[0] - 1
    n_mov = 8 * k
    n_edges = 2 * k

    qhead = np.full(n_mov, -1, dtype=np.int64)
    qtail = np.full(n_mov, -1, dtype=np.int64)
    qlen = np.zeros(n_mov, dtype=np.int64)
    qnext = np.full(V, -1, dtype=np.int64)
    lhead = np.full(n_edges, -1, dtype=np.int64)
    ltail = np.full(n_edges, -1, dtype=np.int64)
    credit = np.zeros(n_mov, dtype=np.float64)
    was_active = np.zeros(n_mov, dtype=np.int64)
    active = np.zeros((k, 4), dtype=np.int64)
    hop_col = np.ones(V, dtype=np.int64)   # next turn-uniform column
    cur_hop = np.full(V, -1, dtype=np.int64)
    ptr = appr_ptr[:-1].copy()

    n_dep = 0
    n_hop = 0

    def open_hop(v, edge, t_entry, mov):
        nonlocal n_hop
        hop_veh[n_hop] = v
        hop_edge[n_hop] = edge
        hop_mov[n_hop] = mov
        hop_entry[n_hop] = t_entry
        hop_dep[n_hop] = -1.0
        cur_hop[v] = n_hop
        n_hop += 1

    def record_dep(v, m, t_dep, wait):
        nonlocal n_dep
        dep_veh[n_dep] = v
        dep_mov[n_dep] = m
        dep_t[n_dep] = t_dep
        dep_wait[n_dep] = wait
        n_dep += 1

    def route(v, node, phase, t_dep):
        """Send a vehicle beyond a stopline it just crossed."""
        kind = _KIND_FROM_PHASE[phase]
        turn = pending_turn[v]
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
        else:  # SB
            go_east = turn == TURN_LEFT
            go_west = turn == TURN_RIGHT
            off = turn == TURN_THROUGH
        if off:
            exit_t[v] = t_dep
            exit_code[v] = EXIT_TURNED
            return
        if go_east:
            if node == k - 1:
                exit_t[v] = t_dep
                exit_code[v] = EXIT_EAST
                return
            edge = 1 + node
            down = node + 1
            down_kind = EB
        else:
            if node == 0:
                exit_t[v] = t_dep
                exit_code[v] = EXIT_WEST
                return
            edge = 2 * k - node
            down = node - 1
            down_kind = WB
        u = turn_uniforms[v, hop_col[v]]
        hop_col[v] += 1
        if u < turn_cdf[down, down_kind, 0]:
            nxt = TURN_LEFT
        elif u < turn_cdf[down, down_kind, 1]:
            nxt = TURN_THROUGH
        else:
            nxt = TURN_RIGHT
        phase_next = _LEFT_PHASE[down_kind] if nxt == TURN_LEFT else _THROUGH_PHASE[down_kind]
        mov_next = down * 8 + phase_next
        pending_mov[v] = mov_next
        pending_turn[v] = nxt
        stopline_arr[v] = t_dep + tau_edge[edge]
        open_hop(v, edge, t_dep, mov_next)
        # append to link FIFO
        qnext[v] = -1
        if ltail[edge] < 0:
            lhead[edge] = v
        else:
            qnext[ltail[edge]] = v
        ltail[edge] = v

    def depart(v, m, t_dep, wait):
        node = m // 8
        phase = m - node * 8
        record_dep(v, m, t_dep, wait)
        if cur_hop[v] >= 0:
            hop_dep[cur_hop[v]] = t_dep
            cur_hop[v] = -1
        route(v, node, phase, t_dep)

    def join(v, ft):
        m = pending_mov[v]
        node = m // 8
        group = (m - node * 8) // 2
        if active[node, group] == 1 and qlen[m] == 0:
            # unimpeded passage: empty stopline during an active green
            depart(v, m, stopline_arr[v], 0.0)
            return
        qnext[v] = -1
        if qtail[m] < 0:
            qhead[m] = v
        else:
            qnext[qtail[m]] = v
        qtail[m] = v
        qlen[m] += 1

    for step in range(n_steps):
        ft = step * dt

        # signal state for this step
        for i in range(k):
            local = fmod(ft - offset[i], cycle[i])
            if local < 0.0:
                local += cycle[i]
            for g in range(4):
                if wstart[i, g] + startup <= local < wend[i, g]:
                    active[i, g] = 1
                else:
                    active[i, g] = 0

        # external arrivals reach their first stopline
        for a in range(n_appr):
            p = ptr[a]
            end = appr_ptr[a + 1]
            while p < end and stopline_arr[p] <= ft:
                if first_edge[p] >= 0:
                    open_hop(p, first_edge[p], entry_net_t[p], pending_mov[p])
                join(p, ft)
                p += 1
            ptr[a] = p

        # in-transit vehicles reach downstream stoplines
        for e in range(n_edges):
            v = lhead[e]
            while v >= 0 and stopline_arr[v] <= ft:
                nxt = qnext[v]
                lhead[e] = nxt
                if nxt < 0:
                    ltail[e] = -1
                join(v, ft)
                v = lhead[e]

        # per-interval maximum queue, sampled after arrivals join
        if ft >= warmup:
            j = int(floor((ft - warmup) / interval_s))
            if j < w:
                for m in range(n_mov):
                    if qlen[m] > qmax[m, j]:
                        qmax[m, j] = qlen[m]

        # standing queues discharge at the saturation rate
        for i in range(k):
            for g in range(4):
                for m in (i * 8 + 2 * g, i * 8 + 2 * g + 1):
                    if active[i, g] == 1:
                        if was_active[m] == 0:
                            credit[m] = 0.0
                            was_active[m] = 1
                        credit[m] += sat_rate * dt
                        avail = int(floor(credit[m] + 1e-9))
                        while avail > 0 and qlen[m] > 0:
                            v = qhead[m]
                            qhead[m] = qnext[v]
                            if qhead[m] < 0:
                                qtail[m] = -1
                            qlen[m] -= 1
                            credit[m] -= 1.0
                            avail -= 1
                            depart(v, m, ft, ft - stopline_arr[v])
                        if qlen[m] == 0 and credit[m] > 1.0:
                            credit[m] -= floor(credit[m])
                    else:
                        was_active[m] = 0

    return n_dep, n_hop
