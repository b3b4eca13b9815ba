"""Pure numpy versions of the compiled kernels (same signatures, same results)."""

import numpy as np


def inclusion_exclusion(cum, order, desc_ptr, desc_idx):
    out = np.empty_like(cum)
    for b in order:
        d = desc_idx[desc_ptr[b]:desc_ptr[b + 1]]
        out[b] = cum[b] - out[d].sum(axis=0) if d.size else cum[b]
    return out


def constraint_sums(weights, mem_ptr, mem_idx):
    C = len(mem_ptr) - 1
    if C == 0:
        return np.zeros(0)
    # reduceat mishandles empty segments, so guard them explicitly
    sums = np.add.reduceat(np.append(weights[mem_idx], 0.0), mem_ptr[:-1])
    sums[mem_ptr[1:] == mem_ptr[:-1]] = 0.0
    return sums


def scaling_sweep(weights, log_u, targets, mem_ptr, mem_idx):
    total = weights.sum()
    bad = -1
    for c in range(len(mem_ptr) - 1):
        idx = mem_idx[mem_ptr[c]:mem_ptr[c + 1]]
        s = weights[idx].sum()
        if s <= 0.0:
            bad = c
            break
        s /= total
        if s >= 1.0:
            bad = c
            break
        t = targets[c]
        r = (t * (1.0 - s)) / (s * (1.0 - t))
        weights[idx] *= r
        log_u[c] += np.log(r)
        total *= 1.0 - s + r * s
    weights /= total
    return bad


def match_patterns(rows, pat_ptr, pat_attr, pat_val):
    P = len(pat_ptr) - 1
    out = np.zeros((rows.shape[0], P), dtype=np.uint8)
    for c in range(P):
        a = pat_attr[pat_ptr[c]:pat_ptr[c + 1]]
        v = pat_val[pat_ptr[c]:pat_ptr[c + 1]]
        out[:, c] = np.all(rows[:, a] == v, axis=1)
    return out
