"""Compiled inner loops for large replicate batches.

Each kernel reseeds numba's generator from a caller-supplied seed, so a
replicate depends only on its own seed.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def block_counting_run(seed, n_active, n_dormant, alpha, sigma):
    """One seed-bank coalescent path in block-counting form.

    Blocks that never carried a d-flag are tagged; dormant blocks are
    kept individually (start time of their dormancy, whether it counts as
    a first inactivity period) so that the first inactivity periods of the
    lines that fall asleep before the tagged lines have coalesced can be
    read off the same path.

    Returns ``(tmrca, psi, rho)``.
    """
    np.random.seed(seed)
    cap = n_active + n_dormant + 1
    dstart = np.empty(cap)
    dfirst = np.empty(cap, np.bool_)
    m = 0
    for _ in range(n_dormant):
        dstart[m] = 0.0
        dfirst[m] = True
        m += 1
    tagged = n_active
    untagged = 0
    t = 0.0
    psi = 0.0
    rho = 0.0 if tagged <= 1 else -1.0
    while tagged + untagged + m > 1:
        a = tagged + untagged
        r_merge = a * (a - 1) / 2.0
        r_sleep = a * sigma
        r_wake = m * alpha
        total = r_merge + r_sleep + r_wake
        t += np.random.exponential(1.0 / total)
        u = np.random.random() * total
        if u < r_merge:
            x = np.random.randint(a)
            y = np.random.randint(a - 1)
            if y >= x:
                y += 1
            # a merge keeps the tag only if both blocks carry it
            if x < tagged or y < tagged:
                tagged -= 1
            else:
                untagged -= 1
        elif u < r_merge + r_sleep:
            x = np.random.randint(a)
            dstart[m] = t
            if x < tagged:
                tagged -= 1
                dfirst[m] = rho < 0.0
            else:
                untagged -= 1
                dfirst[m] = False
            m += 1
        else:
            x = np.random.randint(m)
            if dfirst[x]:
                length = t - dstart[x]
                if length > psi:
                    psi = length
            m -= 1
            dstart[x] = dstart[m]
            dfirst[x] = dfirst[m]
            untagged += 1
        if rho < 0.0 and tagged <= 1:
            rho = t
    return t, psi, rho


@numba.njit(cache=True)
def block_counting_batch(seeds, n_active, n_dormant, alpha, sigma):
    reps = seeds.shape[0]
    out = np.empty((reps, 3))
    for r in range(reps):
        tm, ps, rh = block_counting_run(seeds[r], n_active[r], n_dormant[r], alpha, sigma)
        out[r, 0] = tm
        out[r, 1] = ps
        out[r, 2] = rh
    return out


@numba.njit(cache=True)
def fixation_run(seed, size, alpha, sigma, p):
    """Fixation time of level 1's type in a ``size``-level lookdown.

    Clock ticks involving a dormant level cannot transmit a type, so only
    pairs of active levels are simulated (thinning); among them the lower
    level is the parent.  Only the indicator "carries the type of level 1"
    is tracked.
    """
    np.random.seed(seed)
    if size == 1:
        return 0.0
    carrier = np.zeros(size, np.bool_)
    carrier[0] = True
    active = np.empty(size, np.int64)
    dormant = np.empty(size, np.int64)
    n_act = 0
    n_dor = 0
    for lv in range(size):
        if np.random.random() < p:
            active[n_act] = lv
            n_act += 1
        else:
            dormant[n_dor] = lv
            n_dor += 1
    carriers = 1
    t = 0.0
    while True:
        r_pair = n_act * (n_act - 1) / 2.0
        r_sleep = n_act * sigma
        r_wake = n_dor * alpha
        total = r_pair + r_sleep + r_wake
        t += np.random.exponential(1.0 / total)
        u = np.random.random() * total
        if u < r_pair:
            x = np.random.randint(n_act)
            y = np.random.randint(n_act - 1)
            if y >= x:
                y += 1
            lo = min(active[x], active[y])
            hi = max(active[x], active[y])
            if carrier[lo] != carrier[hi]:
                carrier[hi] = carrier[lo]
                if carrier[lo]:
                    carriers += 1
                    if carriers == size:
                        return t
                else:
                    carriers -= 1
        elif u < r_pair + r_sleep:
            x = np.random.randint(n_act)
            lv = active[x]
            n_act -= 1
            active[x] = active[n_act]
            dormant[n_dor] = lv
            n_dor += 1
        else:
            x = np.random.randint(n_dor)
            lv = dormant[x]
            n_dor -= 1
            dormant[x] = dormant[n_dor]
            active[n_act] = lv
            n_act += 1


@numba.njit(cache=True)
def fixation_batch(seeds, size, alpha, sigma, p):
    out = np.empty(seeds.shape[0])
    for r in range(seeds.shape[0]):
        out[r] = fixation_run(seeds[r], size, alpha, sigma, p)
    return out
