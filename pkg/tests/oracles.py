"""Independent reference implementations used by both unit and acceptance tests.

These stay deliberately naive (explicit loops, scalar math) so they share no
code path with the implementations they check.
"""

import math

import numpy as np


def loop_oracle(H, mask, params):
    """Direct nested-loop evaluation of the factorized attention equations."""
    N, m, d = H.shape
    dh = params.d_head
    valid = [t for t in range(m) if mask[t]]

    chan_profile = np.zeros((N, d))
    time_profile = np.zeros((m, d))
    for t in range(m):
        for k in range(d):
            time_profile[t, k] = sum(H[c, t, k] for c in range(N)) / N
    for c in range(N):
        for k in range(d):
            chan_profile[c, k] = sum(H[c, t, k] for t in valid) / len(valid)

    def score(w_q, w_k, x):
        key = [sum(w_k[a, k] * x[k] for k in range(d)) for a in range(dh)]
        return sum(w_q[0, a] * key[a] for a in range(dh)) / math.sqrt(dh)

    outs = []
    for head in params.heads:
        s_t = [score(head.W_Q_t.data, head.W_K_t.data, chan_profile[c]) for c in range(N)]
        e_t = [math.exp(s - max(s_t)) for s in s_t]
        a_t = [e / sum(e_t) for e in e_t]
        s_c = [score(head.W_Q_c.data, head.W_K_c.data, time_profile[t]) for t in valid]
        e_c = [math.exp(s - max(s_c)) for s in s_c]
        a_c = np.zeros(m)
        for t, e in zip(valid, e_c):
            a_c[t] = e / sum(e_c)
        v = np.zeros(dh)
        for k in range(dh):
            for t in range(m):
                for c in range(N):
                    val = sum(head.W_V.data[k, a] * H[c, t, a] for a in range(d))
                    v[k] += a_c[t] * a_t[c] * val
        outs.append(v)
    return np.concatenate(outs)


def brute_force_uar(labels, preds, n_classes):
    """Per-class recall mean computed with plain Python counting."""
    recalls = []
    for c in range(n_classes):
        total = sum(1 for l in labels if l == c)
        if total == 0:
            continue
        correct = sum(1 for l, p in zip(labels, preds) if l == c and p == c)
        recalls.append(correct / total)
    return sum(recalls) / len(recalls)
