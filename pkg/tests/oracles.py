"""Brute-force reference implementations used only by the tests."""
from __future__ import annotations

import itertools

import numpy as np


# ---------------------------------------------------------------- CRF
def crf_tables(problem, cfg):
    """Unary energies (n x L) and the zero-diagonal kernel (n x n), scalar loops."""
    from mhparse.crf import pairwise_kernel

    h, w = problem.q.shape
    n, L = h * w, problem.num_labels
    q = problem.q.ravel()
    masks = problem.person_masks.reshape(L - 1, -1)
    u = np.zeros((n, L))
    for k in range(n):
        for i in range(L):
            psi = (1.0 - q[k]) + 1e-3 if i == 0 else q[k] * masks[i - 1, k] + q[k]
            u[k, i] = -np.log(max(psi, 1e-9))
    f = problem.features.reshape(n, -1)
    c = problem.image.reshape(n, 3)
    pos = [(k // w, k % w) for k in range(n)]
    kap = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a != b:
                kap[a, b] = pairwise_kernel(cfg, f[a], f[b], pos[a], pos[b], c[a], c[b])
    return u, kap


def _labelings(n, L):
    return np.array(list(itertools.product(range(L), repeat=n)), dtype=np.int64).reshape(-1, n)


def _part_energy(labs, u, kap, mu):
    e = u[np.arange(labs.shape[1])[None, :], labs].sum(axis=1)
    diff = labs[:, :, None] != labs[:, None, :]
    return e + 0.5 * mu * (diff * kap[None]).sum(axis=(1, 2))


def exact_crf(u, kap, mu, chunk=512):
    """Exact marginals (n x L), minimum energy and a MAP labelling.

    The pixels are split into two halves; all labellings of each half are
    enumerated and the cross-half Potts term is evaluated as a matrix
    product, so the joint table is never materialized all at once.
    """
    n, L = u.shape
    na = n // 2
    A, B = np.arange(na), np.arange(na, n)
    la, lb = _labelings(na, L), _labelings(n - na, L)
    ea = _part_energy(la, u[A], kap[np.ix_(A, A)], mu)
    eb = _part_energy(lb, u[B], kap[np.ix_(B, B)], mu)
    kab = kap[np.ix_(A, B)]
    # cross = mu * (sum kab - sum_{k,l} kab[k,l] [a_k == b_l])
    onehot_a = np.eye(L)[la]                   # |A| x na x L
    onehot_b = np.eye(L)[lb]                   # |B| x nb x L
    va = np.einsum("pkl,kj->pjl", onehot_a, kab).reshape(len(la), -1)   # |A| x (nb*L)
    vb = onehot_b.reshape(len(lb), -1)
    base = mu * kab.sum()
    shift = np.inf
    best = (np.inf, None)
    rows, cols = [], np.zeros(len(lb))
    for s in range(0, len(la), chunk):
        e = ea[s:s + chunk, None] + eb[None, :] + base - mu * (va[s:s + chunk] @ vb.T)
        i = np.unravel_index(np.argmin(e), e.shape)
        if e[i] < best[0]:
            best = (float(e[i]), np.concatenate([la[s + i[0]], lb[i[1]]]))
        if e[i] < shift:
            # rescale what was accumulated against the new minimum
            if np.isfinite(shift):
                r = np.exp(-(shift - e[i]))
                rows = [x * r for x in rows]
                cols *= r
            shift = e[i]
        p = np.exp(-(e - shift))
        rows.append(p.sum(axis=1))
        cols += p.sum(axis=0)
    rows = np.concatenate(rows)
    z = rows.sum()
    marg = np.zeros((n, L))
    for k in range(na):
        for l in range(L):
            marg[k, l] = rows[la[:, k] == l].sum() / z
    for k in range(n - na):
        for l in range(L):
            marg[na + k, l] = cols[lb[:, k] == l].sum() / z
    return marg, best[0], best[1]


def labelling_energy(labels, u, kap, mu):
    lab = np.asarray(labels).ravel()
    e = sum(u[k, lab[k]] for k in range(lab.size))
    for a in range(lab.size):
        for b in range(a + 1, lab.size):
            if lab[a] != lab[b]:
                e += mu * kap[a, b]
    return float(e)


# ---------------------------------------------------------------- metrics
def loop_category_ious(pred, gt):
    out = {}
    cats = {int(v) for v in np.asarray(pred).ravel()} | {int(v) for v in np.asarray(gt).ravel()}
    for c in sorted(cats - {0}):
        inter = union = 0
        for a, b in zip(np.asarray(pred).ravel(), np.asarray(gt).ravel()):
            inter += (a == c) and (b == c)
            union += (a == c) or (b == c)
        out[c] = inter / union
    return out


def loop_overlap(pred, gt):
    ious = loop_category_ious(pred, gt)
    return sum(ious.values()) / len(ious) if ious else 0.0


def lexicographic_matching(order, ov, threshold):
    """Best injective assignment by brute force.

    Candidates are all injective partial maps prediction -> GT whose matched
    overlaps reach the threshold. The winner maximises, in prediction order,
    the sequence of matched overlaps (unmatched = -1). That is the greedy
    rule stated as a global optimum, so it shares no code with the greedy
    loop.
    """
    n_p, n_g = ov.shape
    best_key, best = None, None
    choices = [[None] + [j for j in range(n_g) if ov[i, j] >= threshold] for i in range(n_p)]
    for combo in itertools.product(*choices):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple(ov[i, combo[i]] if combo[i] is not None else -1.0 for i in order)
        if best_key is None or key > best_key:
            best_key, best = key, combo
    return list(best)


def interpolated_ap(flags, confidences, n_gt, order):
    """Area under the precision/recall curve with precision made monotone."""
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    tp = [flags[i] for i in order]
    prec, rec = [], []
    hits = 0
    for k, t in enumerate(tp, 1):
        hits += t
        prec.append(hits / k)
        rec.append(hits / n_gt)
    area, prev = 0.0, 0.0
    for k in range(len(tp)):
        if rec[k] > prev:
            area += (rec[k] - prev) * max(prec[k:])
            prev = rec[k]
    return area


def tie_orderings(confidences):
    """Every ordering by decreasing confidence, permuting within ties."""
    groups = {}
    for i, c in enumerate(confidences):
        groups.setdefault(c, []).append(i)
    levels = [groups[c] for c in sorted(groups, reverse=True)]
    for perms in itertools.product(*[itertools.permutations(g) for g in levels]):
        yield [i for p in perms for i in p]


def brute_ap(scenes, threshold):
    """Set of AP values over all tie-consistent orderings of the pooled predictions."""
    conf = [c for s in scenes for c in s.confidences]
    offsets = np.cumsum([0] + [len(s.preds) for s in scenes])
    n_gt = sum(len(s.gts) for s in scenes)
    values = set()
    for order in tie_orderings(conf):
        flags = []
        for k, s in enumerate(scenes):
            local = [i - offsets[k] for i in order if offsets[k] <= i < offsets[k + 1]]
            ov = np.array([[loop_overlap(p, g) for g in s.gts] for p in s.preds]).reshape(len(s.preds), len(s.gts))
            m = lexicographic_matching(local, ov, threshold)
            flags += [j is not None for j in m]
        values.add(round(interpolated_ap(flags, conf, n_gt, order), 12))
    return values


def loop_pcp(scenes, threshold, order_of):
    scores = []
    for s in scenes:
        ov = np.array([[loop_overlap(p, g) for g in s.gts] for p in s.preds]).reshape(len(s.preds), len(s.gts))
        m = lexicographic_matching(order_of(s), ov, threshold)
        for j, g in enumerate(s.gts):
            score = 0.0
            if j in m:
                i = m.index(j)
                ious = loop_category_ious(s.preds[i], g)
                gt_cats = sorted({int(v) for v in np.asarray(g).ravel()} - {0})
                score = sum(ious[c] > threshold for c in gt_cats) / len(gt_cats)
            scores.append(score)
    return sum(scores) / len(scores)


def loop_box(mask):
    ys, xs = [], []
    for y, row in enumerate(np.asarray(mask)):
        for x, v in enumerate(row):
            if v:
                ys.append(y)
                xs.append(x)
    return min(ys), min(xs), max(ys), max(xs)


def loop_closeness(mask_lists):
    vals = []
    for masks in mask_lists:
        boxes = [loop_box(m) for m in masks]
        pair = []
        for a in range(len(boxes)):
            for b in range(a + 1, len(boxes)):
                (y0, x0, y1, x1), (v0, u0, v1, u1) = boxes[a], boxes[b]
                inter = max(0, min(y1, v1) - max(y0, v0) + 1) * max(0, min(x1, u1) - max(x0, u0) + 1)
                area_a = (y1 - y0 + 1) * (x1 - x0 + 1)
                area_b = (v1 - v0 + 1) * (u1 - u0 + 1)
                pair.append(inter / (area_a + area_b - inter))
        vals.append(sum(pair) / len(pair) if pair else 0.0)
    return sum(vals) / len(vals)
