"""Slow reference implementations written directly from the update rules.

They share no code with the package and are used as independent routes in
equivalence tests.
"""

import math


def ap_similarity(points, preference):
    n = len(points)
    s = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                s[i][j] = float(preference)
            else:
                s[i][j] = -sum((float(a) - float(b)) ** 2 for a, b in zip(points[i], points[j]))
    return s


def ap_oracle(points, preference, damping=0.5, max_iter=200, conv_window=15):
    """Returns (exemplars, assignment, converged, iterations)."""
    s = ap_similarity(points, preference)
    n = len(s)
    # evidence this close to zero is treated as zero (same rule as the package)
    tol = 1e-12 * max(1.0, max(abs(v) for row in s for v in row))
    if n == 1:
        return (0,), (0,), True, 0
    r = [[0.0] * n for _ in range(n)]
    a = [[0.0] * n for _ in range(n)]
    prev = None
    run = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_r = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for k in range(n):
                best = -math.inf
                for kk in range(n):
                    if kk != k:
                        best = max(best, a[i][kk] + s[i][kk])
                new_r[i][k] = s[i][k] - best
        r = [[damping * r[i][k] + (1 - damping) * new_r[i][k] for k in range(n)] for i in range(n)]

        new_a = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for k in range(n):
                if i == k:
                    new_a[i][k] = sum(max(0.0, r[ii][k]) for ii in range(n) if ii != k)
                else:
                    total = r[k][k] + sum(max(0.0, r[ii][k]) for ii in range(n) if ii != i and ii != k)
                    new_a[i][k] = min(0.0, total)
        a = [[damping * a[i][k] + (1 - damping) * new_a[i][k] for k in range(n)] for i in range(n)]

        current = tuple(k for k in range(n) if r[k][k] + a[k][k] > tol)
        run = run + 1 if current == prev else 1
        prev = current
        if current and run >= conv_window:
            converged = True
            break

    exemplars = prev or ()
    if not exemplars:
        vals = [r[k][k] + a[k][k] for k in range(n)]
        exemplars = (next(k for k in range(n) if vals[k] >= max(vals) - tol),)
    assignment = []
    for i in range(n):
        if i in exemplars:
            assignment.append(i)
            continue
        best_k, best_v = None, -math.inf
        for k in sorted(exemplars):
            if s[i][k] > best_v:
                best_k, best_v = k, s[i][k]
        assignment.append(best_k)
    return tuple(exemplars), tuple(assignment), converged, it


def mips_oracle(interests, item_emb, n, exclude=()):
    scored = []
    for idx, item in enumerate(item_emb):
        if idx in set(exclude):
            continue
        best = -math.inf
        for h in interests:
            dot = 0.0
            for x, y in zip(h, item):
                dot += float(x) * float(y)
            best = max(best, dot)
        scored.append((-best, idx, best))
    scored.sort()
    return [(idx, score) for _, idx, score in scored[:n]]


def recall_oracle(ranking, truth, k):
    hit = 0
    for item in truth:
        if item in list(ranking)[:k]:
            hit += 1
    return hit / len(truth)


def ndcg_oracle(ranking, truth, k):
    gains = [1.0 if item in truth else 0.0 for item in list(ranking)[:k]]
    dcg = 0.0
    for pos, g in enumerate(gains, start=1):
        dcg += g / math.log(pos + 1, 2)
    ideal = [1.0] * min(len(truth), k)
    idcg = 0.0
    for pos, g in enumerate(ideal, start=1):
        idcg += g / math.log(pos + 1, 2)
    return dcg / idcg


def hr_oracle(rankings, truths, k):
    users_hit = 0
    for ranking, truth in zip(rankings, truths):
        if any(item in truth for item in list(ranking)[:k]):
            users_hit += 1
    return users_hit / len(rankings)
