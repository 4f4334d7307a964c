"""Classical feature pipeline run on predicted and reference images.

Predictions carry different noise than real captures, so images pass
through a bilateral filter first. Corners come from a Harris response with
non-maximum suppression; descriptors are either a gradient-orientation
histogram (128-float, L2-matched) or a seeded pixel-comparison bit string
(256-bit, Hamming-matched). Matching is exhaustive with Lowe's ratio test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .core import Image, as_gray
from .errors import ContractViolation, require

FLOAT_KIND = "float-hog"
BINARY_KIND = "binary"
PATCH = 16
_HARRIS_K = 0.05
_NMS_RADIUS = 4
_QUALITY = 0.01
_BINARY_PAIR_SEED = 0x5ED1F7


def bilateral_filter(img, sigma_spatial: float = 3.0, sigma_range: float = 0.1):
    """Edge-preserving smoothing over a window of radius 2 * sigma_spatial."""
    require(sigma_spatial > 0.0 and sigma_range > 0.0, "bilateral sigmas must be positive")
    arr = as_gray(img)
    radius = int(2.0 * sigma_spatial)
    h, w = arr.shape
    padded = np.pad(arr, radius, mode="reflect")
    acc = np.zeros_like(arr)
    norm = np.zeros_like(arr)
    inv2ss = 1.0 / (2.0 * sigma_spatial ** 2)
    inv2sr = 1.0 / (2.0 * sigma_range ** 2)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            weight = math.exp(-(dy * dy + dx * dx) * inv2ss) \
                * np.exp(-((shifted - arr) ** 2) * inv2sr)
            acc += weight * shifted
            norm += weight
    out = acc / norm
    return Image(out[:, :, None]) if isinstance(img, Image) else out


@dataclass(frozen=True)
class Keypoint:
    u: float        # column, sub-pixel
    v: float        # row, sub-pixel
    response: float
    scale: float = float(PATCH)

    def __post_init__(self):
        require(self.response > 0.0, "keypoint response must be positive")


def _parabolic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if abs(denom) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def detect_keypoints(img, max_count: int = 100) -> list:
    """Harris corners: adaptive threshold, NMS radius 4, strongest first."""
    arr = as_gray(img)
    gy, gx = np.gradient(arr)
    sxx = gaussian_filter(gx * gx, 1.5, mode="reflect")
    syy = gaussian_filter(gy * gy, 1.5, mode="reflect")
    sxy = gaussian_filter(gx * gy, 1.5, mode="reflect")
    response = sxx * syy - sxy * sxy - _HARRIS_K * (sxx + syy) ** 2
    peak = float(response.max(initial=0.0))
    if peak <= 1e-12:
        return []
    threshold = _QUALITY * peak
    local_max = maximum_filter(response, size=2 * _NMS_RADIUS + 1, mode="reflect")
    margin = 5
    mask = (response >= local_max) & (response > threshold)
    mask[:margin, :] = mask[-margin:, :] = False
    mask[:, :margin] = mask[:, -margin:] = False
    vs, us = np.nonzero(mask)
    points = []
    for v, u in zip(vs, us):
        du = _parabolic_offset(response[v, u - 1], response[v, u], response[v, u + 1])
        dv = _parabolic_offset(response[v - 1, u], response[v, u], response[v + 1, u])
        points.append(Keypoint(u=float(u + du), v=float(v + dv),
                               response=float(response[v, u])))
    points.sort(key=lambda k: -k.response)
    return points[:max_count]


@dataclass(frozen=True)
class Descriptor:
    kind: str
    values: np.ndarray  # float64 (128,) for float-hog; uint8 0/1 (256,) for binary

    def __post_init__(self):
        require(self.kind in (FLOAT_KIND, BINARY_KIND), f"unknown descriptor kind {self.kind!r}")
        v = np.asarray(self.values)
        if self.kind == FLOAT_KIND:
            require(v.shape == (128,), "float descriptor must have 128 entries")
            require(abs(np.linalg.norm(v) - 1.0) < 1e-6, "float descriptor must be unit-norm")
        else:
            require(v.shape == (256,), "binary descriptor must have 256 bits")
        v = np.array(v, dtype=np.float64 if self.kind == FLOAT_KIND else np.uint8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _sample_patch(arr: np.ndarray, kp: Keypoint, size: int = PATCH) -> np.ndarray:
    """Bilinear patch sample centered on the sub-pixel keypoint, reflect-padded."""
    h, w = arr.shape
    offs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    ys = kp.v + offs[:, None] + np.zeros((1, size))
    xs = kp.u + offs[None, :] + np.zeros((size, 1))
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    pad = size + 2
    big = np.pad(arr, pad, mode="reflect")
    y0 += pad
    x0 += pad
    return ((1 - fy) * (1 - fx) * big[y0, x0] + (1 - fy) * fx * big[y0, x0 + 1]
            + fy * (1 - fx) * big[y0 + 1, x0] + fy * fx * big[y0 + 1, x0 + 1])


def _binary_pairs():
    rng = np.random.default_rng(_BINARY_PAIR_SEED)
    # Gaussian around the patch center, classic intensity-comparison layout
    pts = rng.normal(loc=(PATCH - 1) / 2.0, scale=PATCH / 5.0, size=(256, 2, 2))
    return np.clip(np.rint(pts), 0, PATCH - 1).astype(int)


_PAIRS = _binary_pairs()


def describe(img, kp: Keypoint, kind: str = FLOAT_KIND) -> Descriptor:
    """Compute one descriptor for a 16x16 patch around the keypoint."""
    arr = as_gray(img)
    patch = _sample_patch(arr, kp)
    if kind == BINARY_KIND:
        a = patch[_PAIRS[:, 0, 0], _PAIRS[:, 0, 1]]
        b = patch[_PAIRS[:, 1, 0], _PAIRS[:, 1, 1]]
        return Descriptor(kind=BINARY_KIND, values=(a > b).astype(np.uint8))
    if kind != FLOAT_KIND:
        raise ContractViolation(f"unknown descriptor kind {kind!r}")
    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)
    ori = np.arctan2(gy, gx) % (2.0 * math.pi)
    bins = np.minimum((ori / (2.0 * math.pi) * 8.0).astype(int), 7)
    offs = np.arange(PATCH) - (PATCH - 1) / 2.0
    weight = np.exp(-(offs[:, None] ** 2 + offs[None, :] ** 2) / (2.0 * (PATCH / 2.0) ** 2))
    wmag = mag * weight
    hist = np.zeros((4, 4, 8))
    cell_y = np.repeat(np.arange(4), 4)
    cell_x = np.tile(np.arange(4), 4)
    for cy, cx in zip(cell_y, cell_x):
        sl = (slice(cy * 4, cy * 4 + 4), slice(cx * 4, cx * 4 + 4))
        np.add.at(hist[cy, cx], bins[sl].ravel(), wmag[sl].ravel())
    vec = hist.ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        vec = np.full(128, 1.0 / math.sqrt(128.0))
        return Descriptor(kind=FLOAT_KIND, values=vec)
    vec = np.minimum(vec / norm, 0.2)
    vec = vec / np.linalg.norm(vec)
    return Descriptor(kind=FLOAT_KIND, values=vec)


def describe_all(img, keypoints, kind: str = FLOAT_KIND) -> list:
    return [describe(img, kp, kind) for kp in keypoints]


def descriptor_distance(a: Descriptor, b: Descriptor) -> float:
    if a.kind != b.kind:
        raise ContractViolation(f"cannot compare {a.kind} with {b.kind}")
    if a.kind == FLOAT_KIND:
        return float(np.linalg.norm(a.values - b.values))
    return float(np.count_nonzero(a.values != b.values))


@dataclass(frozen=True)
class Match:
    query: int
    train: int
    distance: float
    ratio: float

    def __post_init__(self):
        require(self.distance >= 0.0, "distance must be nonnegative")
        require(0.0 <= self.ratio <= 1.0, "ratio must be in [0, 1]")


def _distance_matrix(queries, trains) -> np.ndarray:
    kind = queries[0].kind
    for d in list(queries) + list(trains):
        if d.kind != kind:
            raise ContractViolation("all descriptors must share one kind")
    q = np.stack([d.values for d in queries]).astype(np.float64)
    t = np.stack([d.values for d in trains]).astype(np.float64)
    if kind == FLOAT_KIND:
        sq = (q * q).sum(axis=1)[:, None] + (t * t).sum(axis=1)[None, :] - 2.0 * (q @ t.T)
        return np.sqrt(np.maximum(sq, 0.0))
    return (q[:, None, :] != t[None, :, :]).sum(axis=2).astype(np.float64)


def match_bruteforce(queries, trains, ratio_threshold: float = 0.8) -> list:
    """Best match per query, kept only when clearly better than the runner-up.

    With a single train candidate the ratio is defined as 0 (no runner-up to
    lose to); ties between the two best distances give ratio 1 and are
    rejected at any threshold below 1.
    """
    require(0.0 < ratio_threshold <= 1.0, "ratio threshold must be in (0, 1]")
    if not queries or not trains:
        return []
    dist = _distance_matrix(queries, trains)
    matches = []
    for qi in range(dist.shape[0]):
        row = dist[qi]
        best = int(np.argmin(row))
        if len(trains) == 1:
            matches.append(Match(query=qi, train=0, distance=float(row[0]), ratio=0.0))
            continue
        second = float(np.partition(row, 1)[1])
        if second <= 0.0:
            ratio = 1.0  # two zero-distance candidates are indistinguishable
        else:
            ratio = float(row[best] / second)
        if ratio < ratio_threshold:
            matches.append(Match(query=qi, train=best, distance=float(row[best]),
                                 ratio=min(ratio, 1.0)))
    return matches


def features_to_jsonl(image_id: str, keypoints, descriptors) -> str:
    """One JSON line per feature, for cross-checks against external tools."""
    lines = []
    for kp, desc in zip(keypoints, descriptors):
        lines.append(json.dumps({
            "image_id": image_id, "u": kp.u, "v": kp.v, "response": kp.response,
            "scale": kp.scale, "kind": desc.kind,
            "values": [int(x) if desc.kind == BINARY_KIND else float(x)
                       for x in desc.values],
        }, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def features_from_jsonl(text: str):
    keypoints, descriptors = [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        keypoints.append(Keypoint(u=rec["u"], v=rec["v"], response=rec["response"],
                                  scale=rec.get("scale", float(PATCH))))
        values = np.asarray(rec["values"])
        descriptors.append(Descriptor(kind=rec["kind"], values=values))
    return keypoints, descriptors
