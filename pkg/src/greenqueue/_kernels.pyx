# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled frame loop.  Mirrors greenqueue._pyengine.run_frames operation for operation."""

from libc.math cimport exp, log2, floor, pow, sqrt
from libc.stdlib cimport malloc, calloc, free

ctypedef long long i64


def run_frames(
    i64 t0, i64 n,
    const i64[:, :, ::1] csi, const i64[:, ::1] arrivals, const i64[:, ::1] harvests,
    const double[:, ::1] u_act,
    i64[::1] q, i64[::1] e,
    const double[:, ::1] pathloss, const double[::1] fading, double noise_w, double xi,
    double bandwidth, double tau, double bits_per_unit,
    const i64[::1] q_cap, const i64[::1] e_cap,
    const double[::1] act_ac, const double[::1] act_re, const i64[::1] act_drain,
    const i64[::1] circuit_ok, double p_cct,
    i64 policy_kind, double[:, ::1] theta,
    const i64[:, ::1] q_map, const i64[:, ::1] e_map, i64 n_qb, i64 n_eb,
    const i64[::1] f_state, const i64[::1] f_action, const double[:, ::1] action_terms,
    const double[:, ::1] state_scale,
    i64 tdma, i64 idle_action,
    i64 learn_kind, double[:, ::1] trace, double[::1] gamma, double[::1] lbar,
    double a0, double b0, i64 step_offset, const double[::1] beta, const double[::1] p0,
    i64 f_kind, const double[::1] f_scale, const i64[::1] f_thr,
    const i64[::1] q_ref, const i64[::1] e_ref, double z_max, double clamp, i64 learn_lm,
    i64[:, ::1] out_q, i64[:, ::1] out_e, i64[:, ::1] out_a, i64[:, ::1] out_drop,
    double[:, ::1] out_g, double[:, ::1] out_gamma, double[:, ::1] out_lbar,
    i64[::1] out_zeta, double[::1] out_inc,
):
    cdef i64 K = q.shape[0]
    cdef i64 A = act_ac.shape[0]
    cdef i64 P = theta.shape[1]
    cdef i64 n_feat = f_state.shape[0]
    cdef i64 i, j, k, m, t, s, b, a, row, owner, served, pre, zeta, feasible, base
    cdef double mx, ssum, c, u, tot, interf, sinr, rate, G, at, bt, sig, step, old, nz, scale, inc_sq, mean_f
    cdef double *probs = <double *> malloc(K * A * sizeof(double))
    cdef double *logit = <double *> malloc(A * sizeof(double))
    cdef double *tx = <double *> malloc(K * sizeof(double))
    cdef double *g = <double *> malloc(K * sizeof(double))
    cdef double *sp = <double *> malloc(K * 5 * sizeof(double))
    cdef i64 *feas = <i64 *> malloc(K * A * sizeof(i64))
    cdef i64 *act = <i64 *> malloc(K * sizeof(i64))
    cdef i64 *rows = <i64 *> malloc(K * sizeof(i64))
    cdef i64 *q_next = <i64 *> malloc(K * sizeof(i64))
    cdef i64 *e_next = <i64 *> malloc(K * sizeof(i64))
    cdef i64 status = 0
    # tabular traces are nonzero only on rows visited since the last reset
    cdef i64 n_rows = P // A if policy_kind == 0 else 0
    cdef i64 r, nt
    cdef char *touched = <char *> calloc(K * n_rows + 1, sizeof(char))
    cdef i64 *tlist = <i64 *> malloc((K * n_rows + 1) * sizeof(i64))
    cdef i64 *tcount = <i64 *> calloc(K, sizeof(i64))
    try:
        for k in range(K):
            for r in range(n_rows):
                for b in range(A):
                    if trace[k, r * A + b] != 0.0:
                        touched[k * n_rows + r] = 1
                        tlist[k * n_rows + tcount[k]] = r
                        tcount[k] += 1
                        break
        for s in range(n):
            t = t0 + s
            owner = (t - 1) % K
            # --- each transmitter draws its action from its local view
            for k in range(K):
                row = (csi[s, k, k] * n_qb + q_map[k, q[k]]) * n_eb + e_map[k, e[k]]
                rows[k] = row
                for a in range(A):
                    feas[k * A + a] = 1 if (act_drain[a] <= e[k] and circuit_ok[a] != 0) else 0
                if policy_kind == 2:
                    for a in range(A):
                        probs[k * A + a] = theta[k, row * A + a]
                else:
                    if policy_kind == 1:
                        sp[k * 5 + 0] = 1.0
                        sp[k * 5 + 1] = q[k] / state_scale[k, 0]
                        sp[k * 5 + 2] = e[k] / state_scale[k, 1]
                        sp[k * 5 + 3] = fading[csi[s, k, k]] / state_scale[k, 2]
                        sp[k * 5 + 4] = 1.0 if q[k] > 0 else 0.0
                        for a in range(A):
                            c = 0.0
                            for i in range(n_feat):
                                c += theta[k, i] * sp[k * 5 + f_state[i]] * action_terms[a, f_action[i]]
                            logit[a] = c
                    else:
                        for a in range(A):
                            logit[a] = theta[k, row * A + a]
                    mx = -1e300
                    for a in range(A):
                        if feas[k * A + a] and logit[a] > mx:
                            mx = logit[a]
                    ssum = 0.0
                    for a in range(A):
                        if feas[k * A + a]:
                            probs[k * A + a] = exp(logit[a] - mx)
                            ssum += probs[k * A + a]
                        else:
                            probs[k * A + a] = 0.0
                    for a in range(A):
                        probs[k * A + a] = probs[k * A + a] / ssum
                if tdma and k != owner:
                    act[k] = idle_action
                else:
                    u = u_act[s, k]
                    c = 0.0
                    m = -1
                    for a in range(A):
                        if probs[k * A + a] > 0.0:
                            c += probs[k * A + a]
                            m = a
                            if u < c:
                                break
                    act[k] = m
                a = act[k]
                if act_drain[a] > e[k] or circuit_ok[a] == 0:
                    status = s + 1
                    return status
            # --- physical layer and queues
            for k in range(K):
                tot = act_ac[act[k]] + act_re[act[k]]
                if tot > 0.0:
                    tx[k] = tot - p_cct
                    if tx[k] < 0.0:
                        tx[k] = 0.0
                else:
                    tx[k] = 0.0
            for k in range(K):
                if tx[k] <= 0.0:
                    rate = 0.0
                else:
                    interf = 0.0
                    for j in range(K):
                        if j != k:
                            interf += tx[j] * pathloss[k, j] * fading[csi[s, k, j]]
                    sinr = xi * tx[k] * pathloss[k, k] * fading[csi[s, k, k]] / (interf + noise_w)
                    rate = bandwidth * log2(1.0 + sinr)
                served = <i64> floor(rate * tau / bits_per_unit)
                pre = q[k] - served
                if pre < 0:
                    pre = 0
                pre = pre + arrivals[s, k]
                out_q[s, k] = q[k]
                out_e[s, k] = e[k]
                out_a[s, k] = act[k]
                if pre > q_cap[k]:
                    out_drop[s, k] = pre - q_cap[k]
                    q_next[k] = q_cap[k]
                else:
                    out_drop[s, k] = 0
                    q_next[k] = pre
                pre = e[k] - act_drain[act[k]] + harvests[s, k]
                e_next[k] = e_cap[k] if pre > e_cap[k] else pre
            # --- learning
            zeta = 1
            for k in range(K):
                if q[k] != q_ref[k] or e[k] != e_ref[k]:
                    zeta = 0
            out_zeta[s] = zeta
            G = 0.0
            for k in range(K):
                if f_kind == 0:
                    c = q[k] * f_scale[k]
                else:
                    c = 1.0 if q[k] >= f_thr[k] else 0.0
                g[k] = beta[k] * c + gamma[k] * (act_ac[act[k]] - p0[k])
                out_g[s, k] = g[k]
                out_gamma[s, k] = gamma[k]
                out_lbar[s, k] = lbar[k]
                G += g[k]
            inc_sq = 0.0
            if learn_kind != 0 and policy_kind != 2:
                at = a0 / pow(<double> (t + step_offset), 2.0 / 3.0)
                bt = b0 / <double> (t + step_offset)
                for k in range(K):
                    sig = G if learn_kind == 1 else g[k]
                    a = act[k]
                    if lbar[k] != lbar[k]:
                        # unset running average starts at the first signal
                        lbar[k] = sig
                        out_lbar[s, k] = sig
                    if policy_kind == 0:
                        if zeta:
                            for j in range(tcount[k]):
                                r = tlist[k * n_rows + j]
                                touched[k * n_rows + r] = 0
                                for b in range(A):
                                    trace[k, r * A + b] = 0.0
                            tcount[k] = 0
                        if not touched[k * n_rows + rows[k]]:
                            touched[k * n_rows + rows[k]] = 1
                            tlist[k * n_rows + tcount[k]] = rows[k]
                            tcount[k] += 1
                        base = rows[k] * A
                        for b in range(A):
                            if feas[k * A + b]:
                                if b == a:
                                    trace[k, base + b] += 1.0 - probs[k * A + b]
                                else:
                                    trace[k, base + b] += 0.0 - probs[k * A + b]
                    else:
                        if zeta:
                            for i in range(P):
                                trace[k, i] = 0.0
                        for i in range(n_feat):
                            mean_f = 0.0
                            for b in range(A):
                                if feas[k * A + b]:
                                    mean_f += probs[k * A + b] * action_terms[b, f_action[i]]
                            trace[k, i] += sp[k * 5 + f_state[i]] * (action_terms[a, f_action[i]] - mean_f)
                    # active coordinates: touched rows (tabular) or all weights (basis)
                    nt = tcount[k] * A if policy_kind == 0 else P
                    if z_max > 0.0:
                        nz = 0.0
                        for j in range(nt):
                            i = tlist[k * n_rows + j // A] * A + j % A if policy_kind == 0 else j
                            nz += trace[k, i] * trace[k, i]
                        nz = sqrt(nz)
                        if nz > z_max:
                            scale = z_max / nz
                            for j in range(nt):
                                i = tlist[k * n_rows + j // A] * A + j % A if policy_kind == 0 else j
                                trace[k, i] = trace[k, i] * scale
                    step = at * (sig - lbar[k])
                    for j in range(nt):
                        i = tlist[k * n_rows + j // A] * A + j % A if policy_kind == 0 else j
                        old = theta[k, i]
                        c = old - step * trace[k, i]
                        if c > clamp:
                            c = clamp
                        elif c < -clamp:
                            c = -clamp
                        theta[k, i] = c
                        inc_sq += (c - old) * (c - old)
                    if learn_lm:
                        c = gamma[k] + bt * (act_ac[a] - p0[k])
                        gamma[k] = c if c > 0.0 else 0.0
                    lbar[k] = lbar[k] + at * (sig - lbar[k])
            out_inc[s] = sqrt(inc_sq)
            for k in range(K):
                q[k] = q_next[k]
                e[k] = e_next[k]
        return status
    finally:
        free(probs); free(logit); free(tx); free(g); free(sp); free(feas)
        free(act); free(rows); free(q_next); free(e_next)
        free(touched); free(tlist); free(tcount)
