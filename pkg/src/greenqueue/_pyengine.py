"""Pure-Python frame loop, used when the compiled kernel is unavailable.

Same arguments and the same arithmetic, in the same order, as
``_kernels.run_frames``; only reductions used for diagnostics (the increment
norm, the trace-norm cap) may differ in the last bits.
"""
from __future__ import annotations

import math

import numpy as np


def run_frames(
    t0, n, csi, arrivals, harvests, u_act, q, e,
    pathloss, fading, noise_w, xi, bandwidth, tau, bits_per_unit, q_cap, e_cap,
    act_ac, act_re, act_drain, circuit_ok, p_cct,
    policy_kind, theta, q_map, e_map, n_qb, n_eb, f_state, f_action, action_terms, state_scale,
    tdma, idle_action,
    learn_kind, trace, gamma, lbar, a0, b0, step_offset, beta, p0, f_kind, f_scale, f_thr,
    q_ref, e_ref, z_max, clamp, learn_lm,
    out_q, out_e, out_a, out_drop, out_g, out_gamma, out_lbar, out_zeta, out_inc,
):
    K = q.shape[0]
    A = act_ac.shape[0]
    n_feat = f_state.shape[0]
    L = pathloss.tolist()
    h = fading.tolist()
    ac_l, re_l, drain_l = act_ac.tolist(), act_re.tolist(), act_drain.tolist()
    circ = circuit_ok.tolist()
    qcap, ecap = q_cap.tolist(), e_cap.tolist()
    qm, em = q_map.tolist(), e_map.tolist()
    fs, fa = f_state.tolist(), f_action.tolist()
    at_l = action_terms.tolist()
    sc = state_scale.tolist()
    beta_l, p0_l, fsc, fthr = beta.tolist(), p0.tolist(), f_scale.tolist(), f_thr.tolist()
    qref, eref = q_ref.tolist(), e_ref.tolist()
    ql, el = q.tolist(), e.tolist()
    # tabular traces are nonzero only on rows visited since the last reset
    P = theta.shape[1]
    n_rows = P // A if policy_kind == 0 else 0
    a_idx = np.arange(A)
    touched = [list(np.flatnonzero(trace[k].reshape(n_rows, A).any(axis=1))) if n_rows else []
               for k in range(K)]
    for s in range(n):
        t = t0 + s
        owner = (t - 1) % K
        cs = csi[s].tolist()
        uk = u_act[s].tolist()
        probs, feas, act, rows, sp = [], [], [], [], []
        for k in range(K):
            row = (cs[k][k] * n_qb + qm[k][ql[k]]) * n_eb + em[k][el[k]]
            rows.append(row)
            fk = [1 if (drain_l[a] <= el[k] and circ[a] != 0) else 0 for a in range(A)]
            feas.append(fk)
            spk = None
            if policy_kind == 2:
                pk = theta[k, row * A:(row + 1) * A].tolist()
            else:
                if policy_kind == 1:
                    spk = [1.0, ql[k] / sc[k][0], el[k] / sc[k][1], h[cs[k][k]] / sc[k][2],
                           1.0 if ql[k] > 0 else 0.0]
                    w = theta[k, :n_feat].tolist()
                    logit = []
                    for a in range(A):
                        c = 0.0
                        ta = at_l[a]
                        for i in range(n_feat):
                            c += w[i] * spk[fs[i]] * ta[fa[i]]
                        logit.append(c)
                else:
                    logit = theta[k, row * A:(row + 1) * A].tolist()
                mx = -1e300
                for a in range(A):
                    if fk[a] and logit[a] > mx:
                        mx = logit[a]
                ssum = 0.0
                pk = [0.0] * A
                for a in range(A):
                    if fk[a]:
                        pk[a] = math.exp(logit[a] - mx)
                        ssum += pk[a]
                pk = [p / ssum for p in pk]
            sp.append(spk)
            probs.append(pk)
            if tdma and k != owner:
                m = idle_action
            else:
                u = uk[k]
                c = 0.0
                m = -1
                for a in range(A):
                    if pk[a] > 0.0:
                        c += pk[a]
                        m = a
                        if u < c:
                            break
            act.append(m)
            if drain_l[m] > el[k] or circ[m] == 0:
                q[:] = ql
                e[:] = el
                return s + 1
        tx = []
        for k in range(K):
            tot = ac_l[act[k]] + re_l[act[k]]
            if tot > 0.0:
                v = tot - p_cct
                tx.append(v if v >= 0.0 else 0.0)
            else:
                tx.append(0.0)
        q_next, e_next = [], []
        for k in range(K):
            if tx[k] <= 0.0:
                rate = 0.0
            else:
                interf = 0.0
                for j in range(K):
                    if j != k:
                        interf += tx[j] * L[k][j] * h[cs[k][j]]
                sinr = xi * tx[k] * L[k][k] * h[cs[k][k]] / (interf + noise_w)
                rate = bandwidth * math.log2(1.0 + sinr)
            served = int(math.floor(rate * tau / bits_per_unit))
            pre = max(ql[k] - served, 0) + int(arrivals[s, k])
            out_q[s, k] = ql[k]
            out_e[s, k] = el[k]
            out_a[s, k] = act[k]
            if pre > qcap[k]:
                out_drop[s, k] = pre - qcap[k]
                q_next.append(qcap[k])
            else:
                out_drop[s, k] = 0
                q_next.append(pre)
            pre = el[k] - drain_l[act[k]] + int(harvests[s, k])
            e_next.append(min(pre, ecap[k]))
        zeta = 1
        for k in range(K):
            if ql[k] != qref[k] or el[k] != eref[k]:
                zeta = 0
        out_zeta[s] = zeta
        g = []
        G = 0.0
        for k in range(K):
            if f_kind == 0:
                c = ql[k] * fsc[k]
            else:
                c = 1.0 if ql[k] >= fthr[k] else 0.0
            gk = beta_l[k] * c + gamma[k] * (ac_l[act[k]] - p0_l[k])
            g.append(gk)
            out_g[s, k] = gk
            out_gamma[s, k] = gamma[k]
            out_lbar[s, k] = lbar[k]
            G += gk
        inc_sq = 0.0
        if learn_kind != 0 and policy_kind != 2:
            at = a0 / math.pow(float(t + step_offset), 2.0 / 3.0)
            bt = b0 / float(t + step_offset)
            for k in range(K):
                sig = G if learn_kind == 1 else g[k]
                a = act[k]
                if math.isnan(lbar[k]):
                    # unset running average starts at the first signal
                    lbar[k] = sig
                    out_lbar[s, k] = sig
                z = trace[k]
                pk, fk = probs[k], feas[k]
                if policy_kind == 0:
                    tl = touched[k]
                    if zeta:
                        for r in tl:
                            z[r * A:(r + 1) * A] = 0.0
                        tl.clear()
                    if rows[k] not in tl:
                        tl.append(rows[k])
                    base = rows[k] * A
                    for b in range(A):
                        if fk[b]:
                            if b == a:
                                z[base + b] += 1.0 - pk[b]
                            else:
                                z[base + b] += 0.0 - pk[b]
                else:
                    if zeta:
                        z[:] = 0.0
                    spk = sp[k]
                    for i in range(n_feat):
                        mean_f = 0.0
                        for b in range(A):
                            if fk[b]:
                                mean_f += pk[b] * at_l[b][fa[i]]
                        z[i] += spk[fs[i]] * (at_l[a][fa[i]] - mean_f)
                if policy_kind == 0:
                    cols = (np.asarray(touched[k])[:, None] * A + a_idx).ravel()
                else:
                    cols = slice(None)
                zc = z[cols]
                if z_max > 0.0:
                    # sequential sum, same order as the compiled loop
                    nz2 = 0.0
                    for v in zc.tolist():
                        nz2 += v * v
                    nz = math.sqrt(nz2)
                    if nz > z_max:
                        zc = zc * (z_max / nz)
                        z[cols] = zc
                step = at * (sig - lbar[k])
                old = theta[k, cols]
                new = old - step * zc
                np.clip(new, -clamp, clamp, out=new)
                theta[k, cols] = new
                d = new - old
                inc_sq += float(np.dot(d, d))
                if learn_lm:
                    c = gamma[k] + bt * (ac_l[a] - p0_l[k])
                    gamma[k] = c if c > 0.0 else 0.0
                lbar[k] = lbar[k] + at * (sig - lbar[k])
        out_inc[s] = math.sqrt(inc_sq)
        ql, el = q_next, e_next
    q[:] = ql
    e[:] = el
    return 0
