"""Independent slow implementations used as test oracles."""
import numpy as np


def boundary_points(mask):
    h, w = mask.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                    pts.append((r, c))
                    break
    return pts


def pairwise(a, b):
    """All-pairs Euclidean distances between two point lists (no distance transform)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def directed(bm, bg):
    d = pairwise(bm, bg)
    return d.min(axis=1), d.min(axis=0)


def hd(m, g):
    bm, bg = boundary_points(m), boundary_points(g)
    if not bm or not bg:
        return None
    a, b = directed(bm, bg)
    return max(a.max(), b.max())


def assd(m, g):
    bm, bg = boundary_points(m), boundary_points(g)
    if not bm or not bg:
        return None
    a, b = directed(bm, bg)
    return (a.sum() + b.sum()) / (a.size + b.size)


def local_dice(m, g, p):
    h, w = m.shape
    nm = ng = ni = 0
    for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = p[0] + dr, p[1] + dc
        if 0 <= r < h and 0 <= c < w:
            nm += int(m[r, c])
            ng += int(g[r, c])
            ni += int(m[r, c] and g[r, c])
    return 1.0 if nm + ng == 0 else 2.0 * ni / (nm + ng)


def dbd(a, b):
    pts = boundary_points(a)
    if not pts:
        return None
    return sum(local_dice(a, b, p) for p in pts) / len(pts)


def sbd(m, g):
    bm, bg = boundary_points(m), boundary_points(g)
    if not bm or not bg:
        return None
    vals = [local_dice(m, g, p) for p in bg] + [local_dice(m, g, p) for p in bm]
    return sum(vals) / len(vals)


def counts(m, g):
    tp = fp = fn = tn = 0
    h, w = m.shape
    for r in range(h):
        for c in range(w):
            if m[r, c] and g[r, c]:
                tp += 1
            elif m[r, c]:
                fp += 1
            elif g[r, c]:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def ratio(a, b):
    return 1.0 if b == 0 else a / b


def all_metrics(m, g):
    """Twelve metrics by definition; None marks an undefined value."""
    tp, fp, fn, tn = counts(m, g)
    area_g = tp + fn
    return {
        "dice": ratio(2 * tp, 2 * tp + fp + fn),
        "iou": ratio(tp, tp + fp + fn),
        "accuracy": ratio(tp + tn, tp + fp + fn + tn),
        "precision": ratio(tp, tp + fp),
        "recall": ratio(tp, tp + fn),
        "specificity": ratio(tn, tn + fp),
        "hd": hd(m, g),
        "assd": assd(m, g),
        "rvd": None if area_g == 0 else abs((tp + fp) - area_g) / area_g,
        "dbd_g": dbd(g, m),
        "dbd_m": dbd(m, g),
        "sbd": sbd(m, g),
    }


def random_mask_pair(rng):
    h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    style = rng.integers(3)
    if style == 0:
        p = rng.uniform(0.05, 0.95)
        return rng.random((h, w)) < p, rng.random((h, w)) < p
    if style == 1:
        def rect():
            m = np.zeros((h, w), bool)
            r0, c0 = rng.integers(0, h), rng.integers(0, w)
            m[r0:r0 + rng.integers(1, h + 1), c0:c0 + rng.integers(1, w + 1)] = True
            return m
        return rect(), rect()
    # sparse or empty masks exercise the undefined and 0/0 paths
    return rng.random((h, w)) < rng.uniform(0, 0.1), rng.random((h, w)) < rng.uniform(0, 0.1)


def schedule_by_hand(t, alpha, beta, x, y, h1=0.1, h2=0.5):
    """Straight transcription of the three-branch exclusion schedule, unfloored."""
    k = (1 - alpha) * beta
    if t < h1 * k * x:
        return h2 * k * y
    if t <= h2 * k * x:
        return -(y / x) * t + (h1 + h2) * k * y
    return h1 * k * y
