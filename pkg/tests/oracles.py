"""Independent brute-force reference implementations used by the tests."""

import itertools
import math

import numpy as np


def km_loop(times, hits, at_risk_minus=None):
    """Product-limit survival as a list of (time, value) via explicit loops.

    ``at_risk_minus`` (optional) gives, per distinct time, a count removed
    from the risk set before the hits are counted.
    """
    pts = []
    s = 1.0
    for u in sorted(set(times)):
        n_at = sum(1 for x in times if x >= u)
        if at_risk_minus is not None:
            n_at -= at_risk_minus(u)
        d = sum(h for x, h in zip(times, hits) if x == u)
        if d > 0:
            s *= 1.0 - d / n_at
            pts.append((u, s))
    return pts


def step_left(pts, t):
    v = 1.0
    for u, s in pts:
        if u < t:
            v = s
    return v


def censoring_survival(times, events):
    """G with events leaving the risk set before censorings at the same time."""
    ev_at = lambda u: sum(1 for x, e in zip(times, events) if x == u and e == 1)
    return km_loop(list(times), [1 - e for e in events], ev_at)


def auc_pairs(risks, times, events, t):
    """Exhaustive weighted pair enumeration of the cumulative/dynamic AUC."""
    G = censoring_survival(times, events)
    g_t = 1.0
    for u, s in G:
        if u <= t:
            g_t = s
    num = den = 0.0
    n = len(times)
    for i in range(n):
        if not (times[i] <= t and events[i] == 1):
            continue
        wi = 1.0 / step_left(G, times[i])
        for j in range(n):
            if not (times[j] > t or (times[j] == t and events[j] == 0)):
                continue
            wj = 1.0 / g_t
            if risks[i] > risks[j]:
                num += wi * wj
            elif risks[i] == risks[j]:
                num += 0.5 * wi * wj
            den += wi * wj
    return num / den


def breslow_nll(eta, times, events):
    """Breslow negative log partial likelihood by explicit risk-set sums."""
    total = 0.0
    for i in range(len(times)):
        if events[i] == 1:
            risk = sum(math.exp(eta[j]) for j in range(len(times)) if times[j] >= times[i])
            total -= eta[i] - math.log(risk)
    return total


def logrank_by_hand(tl, el, tr, er):
    """Standardised two-sample log-rank |O - E| / sqrt(V) over distinct event times."""
    times = list(tl) + list(tr)
    events = list(el) + list(er)
    group = [1] * len(tl) + [0] * len(tr)
    num = var = 0.0
    for u in sorted({x for x, e in zip(times, events) if e == 1}):
        Y = sum(1 for x in times if x >= u)
        YL = sum(1 for x, g in zip(times, group) if x >= u and g == 1)
        d = sum(1 for x, e in zip(times, events) if x == u and e == 1)
        dL = sum(1 for x, e, g in zip(times, events, group) if x == u and e == 1 and g == 1)
        num += dL - YL * d / Y
        if Y > 1:
            var += (YL / Y) * (1 - YL / Y) * ((Y - d) / (Y - 1)) * d
    return abs(num) / math.sqrt(var) if var > 0 else 0.0


def exact_shapley(f, x, background):
    """Exact interventional Shapley values by enumerating all coalitions (small p only)."""
    p = len(x)
    phi = np.zeros(p)
    for j in range(p):
        others = [k for k in range(p) if k != j]
        for r in range(p):
            for S in itertools.combinations(others, r):
                w = math.factorial(r) * math.factorial(p - r - 1) / math.factorial(p)
                with_j = np.array(background, dtype=float)
                without = np.array(background, dtype=float)
                for k in S:
                    with_j[:, k] = x[k]
                    without[:, k] = x[k]
                with_j[:, j] = x[j]
                phi[j] += w * (f(with_j).mean() - f(without).mean())
    return phi
