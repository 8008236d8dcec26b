"""Independent scalar reference implementations used by the tests.

Nothing here imports the package: each oracle is a direct loop over the
defining formula so it can check the vectorized code paths.
"""
import math


def cubic(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def reflect(i, n):
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def _taps(dst, n_in, n_out):
    factor = n_out / n_in
    stretch = min(factor, 1.0)
    centre = (dst + 0.5) / factor - 0.5
    support = 2.0 / stretch
    lo, hi = math.floor(centre - support), math.ceil(centre + support)
    return [(reflect(j, n_in), cubic((centre - j) * stretch)) for j in range(lo, hi + 1)]


def resize(img, out_h, out_w):
    """img: list of rows. Evaluates each output pixel from its own 2-D tap set."""
    H, W = len(img), len(img[0])
    out = []
    for y in range(out_h):
        row = []
        ty = _taps(y, H, out_h)
        for x in range(out_w):
            tx = _taps(x, W, out_w)
            num = den = 0.0
            for iy, wy in ty:
                for ix, wx in tx:
                    num += wy * wx * img[iy][ix]
                    den += wy * wx
            row.append(num / den)
        out.append(row)
    return out


def attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v on nested lists; returns (out, weights)."""
    d = len(q[0])
    weights = []
    for qi in q:
        logits = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(d) for kj in k]
        m = max(logits)
        ex = [math.exp(l - m) for l in logits]
        z = sum(ex)
        weights.append([e / z for e in ex])
    out = [[sum(w * vj[c] for w, vj in zip(wi, v)) for c in range(len(v[0]))] for wi in weights]
    return out, weights


def matvec(mat, vec):
    return [sum(m * x for m, x in zip(row, vec)) for row in mat]


def rmse_cm(pred, gt):
    total, n = 0.0, 0
    for pr, gr in zip(pred, gt):
        for p, g in zip(pr, gr):
            total += (p - g) ** 2
            n += 1
    return 100.0 * math.sqrt(total / n)


def l1(pred, gt):
    total, n = 0.0, 0
    for pr, gr in zip(pred, gt):
        for p, g in zip(pr, gr):
            total += abs(p - g)
            n += 1
    return total / n


def forward_diff(d):
    H, W = len(d), len(d[0])
    gx = [[d[y][x + 1] - d[y][x] if x + 1 < W else 0.0 for x in range(W)] for y in range(H)]
    gy = [[d[y + 1][x] - d[y][x] if y + 1 < H else 0.0 for x in range(W)] for y in range(H)]
    return gx, gy


def pixel_shuffle(x, r):
    """x: [C*r*r][h][w] nested lists -> [C][h*r][w*r] via the index map."""
    crr, h, w = len(x), len(x[0]), len(x[0][0])
    C = crr // (r * r)
    out = [[[None] * (w * r) for _ in range(h * r)] for _ in range(C)]
    for c in range(C):
        for y in range(h):
            for xx in range(w):
                for dy in range(r):
                    for dx in range(r):
                        out[c][y * r + dy][xx * r + dx] = x[c * r * r + dy * r + dx][y][xx]
    return out
