"""Compiled core of the event-driven simulator.

One call simulates a batch of replicates and writes per-checkpoint
observables into preallocated arrays.  Nothing here knows about the Python
record types; :mod:`catalytic_bbm.simulator` does the wrapping.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import _child_key, init_state
from .sampling import _advance, _exponential

STATUS_OK = 0
STATUS_ABORTED = 1
STATUS_NUMERICAL = 2

EVENT_BIRTH = 0
EVENT_BRANCH = 1


@njit(cache=True)
def _grow_f(a, n):
    out = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _grow_i(a, n):
    out = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _grow_s(a, n):
    out = np.empty((max(2 * a.shape[0], n), 3), dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _observe(
    pos, n, time, beta, win_side, win_drift, win_ptr, win_lo, win_hi, top, wcounts
):
    """Fill ``top`` (descending, NaN padded) and ``wcounts``; return (martingale, leftmost)."""
    k = top.shape[0]
    for j in range(k):
        top[j] = np.nan
    nw = win_side.shape[0]
    for w in range(nw):
        wcounts[w] = 0
    s = 0.0
    comp = 0.0
    left = np.inf
    filled = 0
    for i in range(n):
        x = pos[i]
        term = math.exp(-beta * abs(x))
        tmp = s + term
        if abs(s) >= abs(term):
            comp += (s - tmp) + term
        else:
            comp += (term - tmp) + s
        s = tmp
        if x < left:
            left = x
        # insertion into the top-k list
        if filled < k or x > top[k - 1]:
            j = filled if filled < k else k - 1
            while j > 0 and top[j - 1] < x:
                top[j] = top[j - 1]
                j -= 1
            top[j] = x
            if filled < k:
                filled += 1
        for w in range(nw):
            c = win_drift[w] * time
            y = x - c if win_side[w] > 0 else -x - c
            for q in range(win_ptr[w], win_ptr[w + 1]):
                if win_lo[q] <= y < win_hi[q]:
                    wcounts[w] += 1
                    break
    mart = math.exp(-0.5 * beta * beta * time) * (s + comp)
    if n == 0:
        left = np.nan
    return mart, left


@njit(cache=True)
def run_batch(
    keys,
    x0,
    beta,
    branching,
    checkpoints,
    max_particles,
    prune_beyond,
    win_side,
    win_drift,
    win_ptr,
    win_lo,
    win_hi,
    top_k,
    keep_positions,
    log_events,
):
    n_rep = keys.shape[0]
    n_cp = checkpoints.shape[0]
    n_win = win_side.shape[0]

    counts = np.zeros((n_rep, n_cp), dtype=np.int64)
    mart = np.full((n_rep, n_cp), np.nan)
    top = np.full((n_rep, n_cp, top_k), np.nan)
    left = np.full((n_rep, n_cp), np.nan)
    wcounts = np.zeros((n_rep, n_cp, n_win), dtype=np.int64)
    status = np.zeros(n_rep, dtype=np.int64)
    n_branch = np.zeros(n_rep, dtype=np.int64)

    pos_buf = np.empty(16 if keep_positions else 0)
    pos_off = np.zeros(n_rep * n_cp + 1, dtype=np.int64)
    n_pos = 0

    ev_cap = 64 if log_events else 0
    ev_rep = np.empty(ev_cap, dtype=np.int64)
    ev_kind = np.empty(ev_cap, dtype=np.int64)
    ev_time = np.empty(ev_cap)
    ev_pos = np.empty(ev_cap)
    ev_pid = np.empty(ev_cap, dtype=np.int64)
    ev_parent = np.empty(ev_cap, dtype=np.int64)
    ev_child = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0

    cap = 256
    cur_pos = np.empty(cap)
    cur_st = np.empty((cap, 3), dtype=np.uint64)
    cur_id = np.empty(cap, dtype=np.int64)
    nxt_pos = np.empty(cap)
    nxt_st = np.empty((cap, 3), dtype=np.uint64)
    nxt_id = np.empty(cap, dtype=np.int64)
    stk_t = np.empty(cap)
    stk_x = np.empty(cap)
    stk_st = np.empty((cap, 3), dtype=np.uint64)
    stk_id = np.empty(cap, dtype=np.int64)
    st = np.empty(3, dtype=np.uint64)

    for r in range(n_rep):
        n_cur = 1
        cur_pos[0] = x0
        init_state(cur_st[0], keys[r])
        cur_id[0] = 0
        next_id = 1
        if log_events:
            if n_ev + 1 > ev_rep.shape[0]:
                ev_rep = _grow_i(ev_rep, n_ev + 1)
                ev_kind = _grow_i(ev_kind, n_ev + 1)
                ev_time = _grow_f(ev_time, n_ev + 1)
                ev_pos = _grow_f(ev_pos, n_ev + 1)
                ev_pid = _grow_i(ev_pid, n_ev + 1)
                ev_parent = _grow_i(ev_parent, n_ev + 1)
                ev_child = _grow_i(ev_child, n_ev + 1)
            ev_rep[n_ev] = r
            ev_kind[n_ev] = EVENT_BIRTH
            ev_time[n_ev] = 0.0
            ev_pos[n_ev] = x0
            ev_pid[n_ev] = 0
            ev_parent[n_ev] = -1
            ev_child[n_ev] = 0
            n_ev += 1
        t_prev = 0.0
        failed = False
        c_fail = n_cp
        for c in range(n_cp):
            t_next = checkpoints[c]
            n_nxt = 0
            for i in range(n_cur):
                # seed the stack with the surviving particle
                sp = 1
                stk_t[0] = t_prev
                stk_x[0] = cur_pos[i]
                stk_st[0] = cur_st[i]
                stk_id[0] = cur_id[i]
                while sp > 0:
                    sp -= 1
                    t0 = stk_t[sp]
                    x = stk_x[sp]
                    st[:] = stk_st[sp]
                    pid = stk_id[sp]
                    if branching:
                        thr = _exponential(beta, st)
                    else:
                        thr = np.inf
                    branched, v = _advance(x, t0, t_next, thr, st)
                    if v != v:
                        failed = True
                        status[r] = STATUS_NUMERICAL
                        break
                    if not branched:
                        if n_nxt >= nxt_pos.shape[0]:
                            nxt_pos = _grow_f(nxt_pos, n_nxt + 1)
                            nxt_st = _grow_s(nxt_st, n_nxt + 1)
                            nxt_id = _grow_i(nxt_id, n_nxt + 1)
                        nxt_pos[n_nxt] = v
                        nxt_st[n_nxt] = st
                        nxt_id[n_nxt] = pid
                        n_nxt += 1
                        continue
                    n_branch[r] += 1
                    if n_nxt + sp + 2 + (n_cur - i - 1) > max_particles:
                        failed = True
                        status[r] = STATUS_ABORTED
                        break
                    if sp + 2 > stk_t.shape[0]:
                        stk_t = _grow_f(stk_t, sp + 2)
                        stk_x = _grow_f(stk_x, sp + 2)
                        stk_st = _grow_s(stk_st, sp + 2)
                        stk_id = _grow_i(stk_id, sp + 2)
                    key = st[2]
                    for child in (2, 1):
                        stk_t[sp] = v
                        stk_x[sp] = 0.0
                        init_state(stk_st[sp], _child_key(key, child))
                        stk_id[sp] = next_id + child - 1
                        sp += 1
                    if log_events:
                        if n_ev + 3 > ev_rep.shape[0]:
                            ev_rep = _grow_i(ev_rep, n_ev + 3)
                            ev_kind = _grow_i(ev_kind, n_ev + 3)
                            ev_time = _grow_f(ev_time, n_ev + 3)
                            ev_pos = _grow_f(ev_pos, n_ev + 3)
                            ev_pid = _grow_i(ev_pid, n_ev + 3)
                            ev_parent = _grow_i(ev_parent, n_ev + 3)
                            ev_child = _grow_i(ev_child, n_ev + 3)
                        for e in range(3):
                            ev_rep[n_ev + e] = r
                            ev_time[n_ev + e] = v
                            ev_pos[n_ev + e] = 0.0
                        ev_kind[n_ev] = EVENT_BRANCH
                        ev_pid[n_ev] = pid
                        ev_parent[n_ev] = -1
                        ev_child[n_ev] = 0
                        for child in (1, 2):
                            ev_kind[n_ev + child] = EVENT_BIRTH
                            ev_pid[n_ev + child] = next_id + child - 1
                            ev_parent[n_ev + child] = pid
                            ev_child[n_ev + child] = child
                        n_ev += 3
                    next_id += 2
                if failed:
                    break
            if failed:
                c_fail = c
                break
            # swap buffers
            cur_pos, nxt_pos = nxt_pos, cur_pos
            cur_st, nxt_st = nxt_st, cur_st
            cur_id, nxt_id = nxt_id, cur_id
            n_cur = n_nxt
            counts[r, c] = n_cur
            m, lft = _observe(
                cur_pos, n_cur, t_next, beta, win_side, win_drift, win_ptr, win_lo, win_hi, top[r, c], wcounts[r, c]
            )
            mart[r, c] = m
            left[r, c] = lft
            if keep_positions:
                if n_pos + n_cur > pos_buf.shape[0]:
                    pos_buf = _grow_f(pos_buf, n_pos + n_cur)
                pos_buf[n_pos : n_pos + n_cur] = np.sort(cur_pos[:n_cur])
                n_pos += n_cur
            pos_off[r * n_cp + c + 1] = n_pos
            if prune_beyond < np.inf:
                kept = 0
                for j in range(n_cur):
                    if abs(cur_pos[j]) <= prune_beyond:
                        cur_pos[kept] = cur_pos[j]
                        cur_st[kept] = cur_st[j]
                        cur_id[kept] = cur_id[j]
                        kept += 1
                n_cur = kept
            t_prev = t_next
        if failed:
            for c2 in range(c_fail, n_cp):
                pos_off[r * n_cp + c2 + 1] = n_pos
    return (
        counts,
        mart,
        top,
        left,
        wcounts,
        status,
        n_branch,
        pos_buf[:n_pos].copy(),
        pos_off,
        ev_rep[:n_ev].copy(),
        ev_kind[:n_ev].copy(),
        ev_time[:n_ev].copy(),
        ev_pos[:n_ev].copy(),
        ev_pid[:n_ev].copy(),
        ev_parent[:n_ev].copy(),
        ev_child[:n_ev].copy(),
    )
