"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the library code paths they check:
convolution is a plain quadruple loop, pooling enumerates bin membership per
pixel, point-in-polygon is a local crossing-number routine, and blobs are
built by stamping shapes plus a local flood fill.
"""

import math
from collections import deque

import numpy as np
import pytest

from textdetkit.geometry import BitMask
from textdetkit.pseudolabel import ScoredDetection


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# ---------------------------------------------------------------------------
# brute-force numeric oracles


def naive_conv2d(x, weights, bias):
    """Quadruple-loop same-padded cross-correlation, pure Python."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = weights.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for xx in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for dy in range(kh):
                        for dx in range(kw):
                            yy = y + dy - ph
                            xs = xx + dx - pw
                            if 0 <= yy < h and 0 <= xs < w:
                                acc += weights[o, c, dy, dx] * x[c, yy, xs]
                out[o, y, xx] = acc
    return out


def naive_adaptive_max_pool(x, out_h, out_w):
    """Exhaustive per-bin max: every pixel is tested for bin membership."""
    c, h, w = x.shape
    out = np.full((c, out_h, out_w), -np.inf)
    for i in range(out_h):
        for j in range(out_w):
            for y in range(h):
                if not (math.floor(i * h / out_h) <= y < math.ceil((i + 1) * h / out_h)):
                    continue
                for xx in range(w):
                    if not (math.floor(j * w / out_w) <= xx < math.ceil((j + 1) * w / out_w)):
                        continue
                    out[:, i, j] = np.maximum(out[:, i, j], x[:, y, xx])
    return out


def naive_bilinear_upsample(x, out_h, out_w):
    """Direct per-pixel evaluation of the half-pixel sampling formula."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        wy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            wx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] * (1 - wx) + x[ch, y0, x1] * wx
                bot = x[ch, y1, x0] * (1 - wx) + x[ch, y1, x1] * wx
                out[ch, i, j] = top * (1 - wy) + bot * wy
    return out


def points_in_polygon(xs, ys, vertices):
    """Vectorized even-odd (crossing number) test, local to the tests."""
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        if y0 == y1:
            continue
        crosses = ((y0 <= ys) & (ys < y1)) | ((y1 <= ys) & (ys < y0))
        xi = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xs < xi)
    return inside


# ---------------------------------------------------------------------------
# synthetic masks and detections


def fill_holes(bits):
    """Set every background pixel not 4-connected to the border (local BFS)."""
    h, w = bits.shape
    reach = np.zeros((h, w), dtype=bool)
    queue = deque()
    for y in range(h):
        for x in (0, w - 1):
            if not bits[y, x] and not reach[y, x]:
                reach[y, x] = True
                queue.append((y, x))
    for x in range(w):
        for y in (0, h - 1):
            if not bits[y, x] and not reach[y, x]:
                reach[y, x] = True
                queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not bits[ny, nx] and not reach[ny, nx]:
                reach[ny, nx] = True
                queue.append((ny, nx))
    return bits | ~reach


def random_blob_bits(rng, width, height, n_stamps=3, hole_free=True):
    """Union of random rectangles and discs; holes optionally filled."""
    bits = np.zeros((height, width), dtype=bool)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(n_stamps):
        if rng.random() < 0.5 or min(width, height) < 6:
            x0 = int(rng.integers(0, max(width - 2, 1)))
            y0 = int(rng.integers(0, max(height - 2, 1)))
            x1 = int(rng.integers(x0 + 1, min(x0 + width // 2 + 2, width + 1)))
            y1 = int(rng.integers(y0 + 1, min(y0 + height // 2 + 2, height + 1)))
            bits[y0:y1, x0:x1] = True
        else:
            cx = rng.uniform(2, width - 2)
            cy = rng.uniform(2, height - 2)
            r = rng.uniform(1.5, min(width, height) / 4)
            bits |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if not bits.any():
        bits[height // 2, width // 2] = True
    if hole_free:
        bits = fill_holes(bits)
    return bits


def random_blob_mask(rng, width, height, n_stamps=3, hole_free=True):
    return BitMask.from_array(random_blob_bits(rng, width, height, n_stamps, hole_free))


def random_detections(rng, n, width=64, height=64, jitter=0):
    """Detections around random blobs; jitter shifts masks a few pixels so
    different 'models' disagree moderately."""
    dets = []
    for _ in range(n):
        bits = random_blob_bits(rng, width, height, n_stamps=2)
        if jitter:
            dy = int(rng.integers(-jitter, jitter + 1))
            dx = int(rng.integers(-jitter, jitter + 1))
            bits = np.roll(np.roll(bits, dy, axis=0), dx, axis=1)
        mask = BitMask.from_array(bits)
        if mask.is_empty():
            continue
        dets.append(ScoredDetection.from_mask(mask, float(rng.uniform(0.05, 1.0))))
    return dets
