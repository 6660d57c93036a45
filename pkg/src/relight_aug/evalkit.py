"""Matching and homography metric kernels, plus enough scaffolding to run
them end-to-end: a synthetic warped-pair generator and a small corner
detector/descriptor.  External detectors are evaluated by exporting
keypoint/descriptor/homography files; nothing here depends on one.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

_W_EPS = 1e-12


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float = 0.0


@dataclass
class MatchSet:
    """(index into kpts1, index into kpts2, descriptor distance) triples.
    Mutual-NN construction guarantees the mapping is one-to-one."""

    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.pairs:
            return (
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.float64),
            )
        i1, i2, dist = zip(*self.pairs)
        return (
            np.asarray(i1, dtype=np.int64),
            np.asarray(i2, dtype=np.int64),
            np.asarray(dist, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform, stored with h33 = 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) <= _W_EPS:
            raise ValueError("h33 too close to zero to normalize")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _W_EPS:
            raise ValueError("homography is not invertible")
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class EvalConfig:
    pixel_threshold: float = 3.0
    corner_eps: float = 3.0
    image_size: int | tuple[int, int] | None = None

    def validate(self) -> None:
        if not (self.pixel_threshold > 0 and self.corner_eps > 0):
            raise ValueError("thresholds must be positive")

    def to_dict(self) -> dict:
        size = self.image_size
        return {
            "pixel_threshold": self.pixel_threshold,
            "corner_eps": self.corner_eps,
            "image_size": list(size) if isinstance(size, tuple) else size,
        }


def _as_matrix(H) -> np.ndarray:
    return H.matrix if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)


def _hw(image_size) -> tuple[int, int]:
    if isinstance(image_size, (int, np.integer)):
        return int(image_size), int(image_size)
    h, w = image_size
    return int(h), int(w)


def _kp_xy(kpts) -> np.ndarray:
    if isinstance(kpts, np.ndarray):
        return np.asarray(kpts, dtype=np.float64).reshape(-1, 2)
    return np.asarray([(k.x, k.y) for k in kpts], dtype=np.float64).reshape(-1, 2)


# ---- matching ----


def _sq_dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def mutual_nn_matches(desc1: np.ndarray, desc2: np.ndarray) -> MatchSet:
    """Mutual nearest neighbors under Euclidean distance; argmin ties go to
    the lower index on both sides."""
    d1 = np.asarray(desc1, dtype=np.float64)
    d2 = np.asarray(desc2, dtype=np.float64)
    if d1.size == 0 or d2.size == 0:
        return MatchSet()
    if d1.ndim != 2 or d2.ndim != 2 or d1.shape[1] != d2.shape[1]:
        raise ValueError(
            f"descriptor dims disagree: {d1.shape} vs {d2.shape}"
        )
    sq = _sq_dist_matrix(d1, d2)
    nn12 = np.argmin(sq, axis=1)
    nn21 = np.argmin(sq, axis=0)
    pairs = [
        (int(a), int(b), float(math.sqrt(sq[a, b])))
        for a, b in enumerate(nn12)
        if nn21[b] == a
    ]
    return MatchSet(pairs=pairs)


def project_points(H, pts) -> np.ndarray:
    """Homogeneous transform with perspective divide. Points whose w falls
    within 1e-12 of zero map to +inf coordinates (callers count them as
    failures; `degenerate_projections` tallies them)."""
    m = _as_matrix(H)
    xy = _kp_xy(pts)
    hom = np.concatenate([xy, np.ones((len(xy), 1))], axis=1) @ m.T
    w = hom[:, 2:3]
    out = np.full_like(xy, np.inf)
    ok = np.abs(w[:, 0]) > _W_EPS
    out[ok] = hom[ok, :2] / w[ok]
    return out


def degenerate_projections(points: np.ndarray) -> int:
    return int(np.sum(~np.all(np.isfinite(points), axis=1)))


def correct_mask(matches: MatchSet, kpts1, kpts2, H, t: float) -> np.ndarray:
    """True where the match's first point, warped by H, lands within t pixels
    (inclusive) of the second point."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    if len(matches) == 0:
        return np.zeros(0, dtype=bool)
    xy1 = _kp_xy(kpts1)
    xy2 = _kp_xy(kpts2)
    i1, i2, _ = matches.as_arrays()
    if i1.max() >= len(xy1) or i2.max() >= len(xy2):
        raise IndexError("match indices exceed keypoint lists")
    projected = project_points(H, xy1[i1])
    diff = projected - xy2[i2]
    dist = np.where(
        np.all(np.isfinite(projected), axis=1),
        np.sqrt(np.sum(diff * diff, axis=1)),
        np.inf,
    )
    return dist <= t


@dataclass
class PairEval:
    """Everything needed to score one image pair."""

    kpts1: list
    kpts2: list
    matches: MatchSet
    homography: Homography
    name: str = ""


def mma(pairs: Sequence[PairEval], thresholds: Iterable[float]) -> dict[float, float]:
    """Mean over pairs of the per-pair correct-match ratio, per threshold.
    A pair with zero matches contributes ratio 0 and stays in the mean."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mma needs at least one pair")
    curve = {}
    for t in thresholds:
        ratios = []
        for pair in pairs:
            if len(pair.matches) == 0:
                ratios.append(0.0)
                continue
            mask = correct_mask(pair.matches, pair.kpts1, pair.kpts2, pair.homography, t)
            ratios.append(float(np.sum(mask)) / len(pair.matches))
        curve[float(t)] = float(np.mean(ratios))
    return curve


# ---- homography scoring ----


@dataclass(frozen=True)
class HomographyScore:
    mean_corner_error: float
    correct: bool


def corner_points(image_size) -> np.ndarray:
    h, w = _hw(image_size)
    return np.asarray(
        [[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]]
    )


def homography_score(H_true, H_est, image_size, eps: float = 3.0) -> HomographyScore:
    """Mean distance between the four image corners warped by the true and
    the estimated homography; correct iff that mean is <= eps."""
    H_true = H_true if isinstance(H_true, Homography) else Homography(H_true)
    H_est = H_est if isinstance(H_est, Homography) else Homography(H_est)
    corners = corner_points(image_size)
    warped_true = project_points(H_true, corners)
    warped_est = project_points(H_est, corners)
    if degenerate_projections(warped_true) or degenerate_projections(warped_est):
        raise ValueError("a corner projects to infinity; degenerate homography")
    errors = np.sqrt(np.sum((warped_true - warped_est) ** 2, axis=1))
    mean_error = float(np.mean(errors))
    return HomographyScore(mean_corner_error=mean_error, correct=mean_error <= eps)


def homography_dataset_score(scores: Sequence[HomographyScore]) -> float:
    if not scores:
        raise ValueError("no homography scores to aggregate")
    return float(np.mean([s.correct for s in scores]))


# ---- precision / recall ----


def true_matches(kpts1, kpts2, H, t: float) -> set[tuple[int, int]]:
    """Ground-truth correspondences: mutual nearest neighbors in position
    after warping kpts1 by H, kept when within t pixels."""
    xy1 = _kp_xy(kpts1)
    xy2 = _kp_xy(kpts2)
    if len(xy1) == 0 or len(xy2) == 0:
        return set()
    projected = project_points(H, xy1)
    finite = np.all(np.isfinite(projected), axis=1)
    sq = _sq_dist_matrix(np.where(finite[:, None], projected, 1e18), xy2)
    sq[~finite] = np.inf
    nn12 = np.argmin(sq, axis=1)
    nn21 = np.argmin(sq, axis=0)
    out = set()
    for a, b in enumerate(nn12):
        if finite[a] and nn21[b] == a and math.sqrt(sq[a, b]) <= t:
            out.add((int(a), int(b)))
    return out


def precision_recall(matches, correct, true_match_set) -> tuple[float, float]:
    """precision = correct/matched (0 when nothing matched); recall =
    correct/true (0 when no true correspondences exist)."""
    n_matches = len(matches) if not isinstance(matches, (int, np.integer)) else int(matches)
    n_correct = int(np.sum(np.asarray(correct, dtype=bool)))
    if isinstance(true_match_set, (int, np.integer)):
        n_true = int(true_match_set)
    else:
        n_true = len(true_match_set)
    precision = n_correct / n_matches if n_matches else 0.0
    recall = n_correct / n_true if n_true else 0.0
    return precision, recall


# ---- synthetic pair generation ----


@dataclass(frozen=True)
class JitterSpec:
    """Sampling ranges for photometric jitter."""

    brightness: float = 0.1
    contrast: float = 0.15


@dataclass(frozen=True)
class JitterParams:
    brightness_delta: float
    contrast_factor: float


@dataclass
class WarpedPair:
    image: np.ndarray
    homography: Homography
    jitter: JitterParams | None = None


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    wx = (xs - x0)[..., None]
    wy = (ys - y0)[..., None]
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bottom = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def warp_pair(
    image: np.ndarray,
    H,
    jitter: JitterSpec | None = None,
    rng: np.random.Generator | None = None,
) -> WarpedPair:
    """Second view of an image under a homography: inverse bilinear warp,
    optional recorded photometric jitter. H must keep at least half of the
    output pixels sourced in-frame."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("warp_pair expects an HxWxC image")
    H = H if isinstance(H, Homography) else Homography(H)
    h, w = arr.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = project_points(H.inverse(), grid)
    sx = src[:, 0].reshape(h, w)
    sy = src[:, 1].reshape(h, w)
    valid = (
        np.isfinite(sx) & np.isfinite(sy)
        & (sx >= 0.0) & (sx <= w - 1.0)
        & (sy >= 0.0) & (sy <= h - 1.0)
    )
    coverage = float(valid.mean())
    if coverage < 0.5:
        raise ValueError(
            f"homography keeps only {coverage:.0%} of pixels in frame (need >= 50%)"
        )
    warped = np.zeros_like(arr)
    sampled = _bilinear_sample(arr, sx[valid], sy[valid])
    warped[valid] = sampled

    params = None
    if jitter is not None:
        if rng is None:
            raise ValueError("jitter requires an rng")
        params = JitterParams(
            brightness_delta=float(rng.uniform(-jitter.brightness, jitter.brightness)),
            contrast_factor=float(1.0 + rng.uniform(-jitter.contrast, jitter.contrast)),
        )
        warped = np.clip(
            (warped - 0.5) * params.contrast_factor + 0.5 + params.brightness_delta,
            0.0,
            1.0,
        )
    return WarpedPair(image=warped, homography=H, jitter=params)


def random_homography(
    rng: np.random.Generator,
    image_size,
    max_shift: float = 0.08,
) -> Homography:
    """Mild random perspective: corners jittered by up to max_shift of the
    image extent, fit with the direct linear transform."""
    h, w = _hw(image_size)
    src = corner_points((h, w))
    dst = src + rng.uniform(-max_shift, max_shift, size=(4, 2)) * [[w, h]]
    return estimate_homography(src, dst)


# ---- baseline detector / descriptor ----

_PATCH = 16
_NMS_RADIUS = 4
_N_BINS = 8


def _to_gray(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        return arr.mean(axis=2)
    if arr.ndim == 2:
        return arr
    raise ValueError("image must be HxW or HxWxC")


def corner_response(image: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Minimum eigenvalue of the smoothed structure tensor."""
    gray = _to_gray(image)
    gy, gx = np.gradient(gray)
    a = ndimage.gaussian_filter(gx * gx, sigma)
    b = ndimage.gaussian_filter(gx * gy, sigma)
    c = ndimage.gaussian_filter(gy * gy, sigma)
    return (a + c) / 2.0 - np.sqrt(((a - c) / 2.0) ** 2 + b * b)


def baseline_detect_describe(
    image: np.ndarray, max_kpts: int = 500
) -> tuple[list[Keypoint], np.ndarray]:
    """Corner keypoints plus 128-dim gradient-histogram descriptors.

    Local maxima of the structure-tensor minimum eigenvalue survive a 4-px
    non-max suppression; the top max_kpts by response are described by an
    8-bin orientation histogram over a 4x4 cell grid of the surrounding
    16x16 patch, L2-normalized. A constant image yields zero keypoints.
    """
    gray = _to_gray(image)
    h, w = gray.shape
    margin = _PATCH // 2
    if h < 2 * margin + 1 or w < 2 * margin + 1:
        return [], np.zeros((0, 128))
    response = corner_response(image)
    peak = float(response.max())
    if peak <= 1e-12:
        return [], np.zeros((0, 128))

    interior = np.full_like(response, -np.inf)
    interior[margin : h - margin, margin : w - margin] = response[
        margin : h - margin, margin : w - margin
    ]
    size = 2 * _NMS_RADIUS + 1
    is_peak = (interior == ndimage.maximum_filter(interior, size=size)) & (
        interior > peak * 1e-5
    )
    ys, xs = np.nonzero(is_peak)
    scores = response[ys, xs]
    order = np.lexsort((xs, ys, -scores))

    kept: list[tuple[int, int, float]] = []
    for idx in order:
        y, x, s = int(ys[idx]), int(xs[idx]), float(scores[idx])
        if any(abs(y - ky) <= _NMS_RADIUS and abs(x - kx) <= _NMS_RADIUS for ky, kx, _ in kept):
            continue
        kept.append((y, x, s))
        if len(kept) >= max_kpts:
            break

    gy, gx = np.gradient(gray)
    kpts = []
    descs = np.zeros((len(kept), 128))
    for i, (y, x, s) in enumerate(kept):
        kpts.append(Keypoint(x=float(x), y=float(y), score=s))
        px = gx[y - margin : y + margin, x - margin : x + margin]
        py = gy[y - margin : y + margin, x - margin : x + margin]
        descs[i] = _patch_histogram(px, py)
    return kpts, descs


def _patch_histogram(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    magnitude = np.sqrt(gx * gx + gy * gy)
    theta = np.arctan2(gy, gx)
    bins = np.clip(
        np.floor((theta + np.pi) / (2 * np.pi / _N_BINS)).astype(int), 0, _N_BINS - 1
    )
    hist = np.zeros((4, 4, _N_BINS))
    cell = _PATCH // 4
    for cy in range(4):
        for cx in range(4):
            block = np.s_[cy * cell : (cy + 1) * cell, cx * cell : (cx + 1) * cell]
            np.add.at(hist[cy, cx], bins[block].ravel(), magnitude[block].ravel())
    vec = hist.ravel()
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


# ---- homography estimation (convenience; not a scored component) ----


def estimate_homography(pts1, pts2) -> Homography:
    """Normalized direct linear transform from >= 4 correspondences."""
    p1 = _kp_xy(pts1)
    p2 = _kp_xy(pts2)
    if len(p1) != len(p2) or len(p1) < 4:
        raise ValueError("need >= 4 correspondences of equal count")

    def normalize(pts):
        centroid = pts.mean(axis=0)
        centered = pts - centroid
        scale = math.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-12)
        T = np.array(
            [[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1]]
        )
        return (centered * scale), T

    n1, T1 = normalize(p1)
    n2, T2 = normalize(p2)
    rows = []
    for (x, y), (u, v) in zip(n1, n2):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H_norm = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(T2) @ H_norm @ T1)


def ransac_homography(
    kpts1,
    kpts2,
    matches: MatchSet,
    iters: int = 500,
    thresh: float = 3.0,
    rng: np.random.Generator | None = None,
) -> tuple[Homography, np.ndarray]:
    """Standard 4-point RANSAC over mutual-NN matches, refit on inliers."""
    if len(matches) < 4:
        raise ValueError("need >= 4 matches to estimate a homography")
    rng = rng or np.random.default_rng(0)
    xy1 = _kp_xy(kpts1)
    xy2 = _kp_xy(kpts2)
    i1, i2, _ = matches.as_arrays()
    src, dst = xy1[i1], xy2[i2]

    best_mask = None
    best_count = -1
    for _ in range(iters):
        pick = rng.choice(len(src), size=4, replace=False)
        try:
            H = estimate_homography(src[pick], dst[pick])
        except (ValueError, np.linalg.LinAlgError):
            continue
        projected = project_points(H, src)
        err = np.linalg.norm(projected - dst, axis=1)
        mask = np.isfinite(err) & (err <= thresh)
        if int(mask.sum()) > best_count:
            best_count = int(mask.sum())
            best_mask = mask
    if best_mask is None or best_count < 4:
        raise ValueError("ransac found no usable model")
    H = estimate_homography(src[best_mask], dst[best_mask])
    projected = project_points(H, src)
    err = np.linalg.norm(projected - dst, axis=1)
    return H, np.isfinite(err) & (err <= thresh)


# ---- file formats ----


def save_keypoints(path, kpts: Sequence[Keypoint]) -> None:
    lines = [f"{k.x:.17g},{k.y:.17g},{k.score:.17g}" for k in kpts]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_keypoints(path) -> list[Keypoint]:
    kpts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        x, y, score = (float(v) for v in line.split(","))
        kpts.append(Keypoint(x=x, y=y, score=score))
    return kpts


_DESC_MAGIC = b"DSC0"


def save_descriptors(path, desc: np.ndarray) -> None:
    """Binary f32 rows behind a (count, dim) header; CSV when path ends .csv."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(desc, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError("descriptors must be a 2-D array")
    if path.suffix.lower() == ".csv":
        np.savetxt(path, arr, delimiter=",", fmt="%.17g")
        return
    with path.open("wb") as fh:
        fh.write(_DESC_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def load_descriptors(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
        return np.asarray(arr, dtype=np.float64)
    raw = path.read_bytes()
    if raw[:4] != _DESC_MAGIC:
        raise ValueError(f"{path} is not a descriptor file")
    n, dim = struct.unpack_from("<II", raw, 4)
    data = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=12)
    return data.reshape(n, dim).astype(np.float64)


def save_homography(path, H) -> None:
    m = _as_matrix(H)
    Path(path).write_text(
        "\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n",
        encoding="utf-8",
    )


def load_homography(path) -> Homography:
    values = [float(v) for v in Path(path).read_text(encoding="utf-8").split()]
    if len(values) != 9:
        raise ValueError(f"{path} must hold exactly 9 numbers, got {len(values)}")
    return Homography(np.asarray(values).reshape(3, 3))


def save_matches(path, matches: MatchSet) -> None:
    lines = [f"{a},{b},{d:.17g}" for a, b, d in matches.pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_matches(path) -> MatchSet:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        a, b, d = line.split(",")
        pairs.append((int(a), int(b), float(d)))
    return MatchSet(pairs=pairs)


# ---- pair-manifest evaluation (CLI back end) ----


def load_pair(entry: dict, base: Path) -> PairEval:
    kpts1 = load_keypoints(base / entry["kpts1"])
    kpts2 = load_keypoints(base / entry["kpts2"])
    desc1 = load_descriptors(base / entry["desc1"])
    desc2 = load_descriptors(base / entry["desc2"])
    if len(desc1) != len(kpts1) or len(desc2) != len(kpts2):
        raise ValueError(f"pair {entry.get('name', '?')}: descriptor/keypoint count mismatch")
    return PairEval(
        kpts1=kpts1,
        kpts2=kpts2,
        matches=mutual_nn_matches(desc1, desc2),
        homography=load_homography(base / entry["homography"]),
        name=entry.get("name", ""),
    )


def evaluate_pairs(manifest_path, mode: str, config: EvalConfig) -> dict:
    """Score every pair in a manifest. Modes: mma, pr, homography."""
    config.validate()
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    entries = manifest["pairs"]
    if not entries:
        raise ValueError("pair manifest lists no pairs")

    per_pair = []
    t = config.pixel_threshold
    if mode == "mma":
        pairs = [load_pair(e, base) for e in entries]
        for pair in pairs:
            ratio = mma([pair], [t])[t]
            per_pair.append(
                {"name": pair.name, "matches": len(pair.matches), "ratio": ratio}
            )
        aggregate = {"mma": mma(pairs, [t])[t], "threshold": t}
    elif mode == "pr":
        for entry in entries:
            pair = load_pair(entry, base)
            mask = correct_mask(pair.matches, pair.kpts1, pair.kpts2, pair.homography, t)
            truth = true_matches(pair.kpts1, pair.kpts2, pair.homography, t)
            precision, recall = precision_recall(pair.matches, mask, truth)
            per_pair.append(
                {
                    "name": pair.name,
                    "matches": len(pair.matches),
                    "true_matches": len(truth),
                    "precision": precision,
                    "recall": recall,
                }
            )
        aggregate = {
            "precision": float(np.mean([p["precision"] for p in per_pair])),
            "recall": float(np.mean([p["recall"] for p in per_pair])),
            "threshold": t,
        }
    elif mode == "homography":
        if config.image_size is None:
            raise ValueError("homography mode needs image_size in the config")
        scores = []
        for entry in entries:
            if "h_est" not in entry:
                raise ValueError(
                    f"pair {entry.get('name', '?')} has no h_est; homography mode scores estimates"
                )
            H_true = load_homography(base / entry["homography"])
            H_est = load_homography(base / entry["h_est"])
            score = homography_score(H_true, H_est, config.image_size, config.corner_eps)
            scores.append(score)
            per_pair.append(
                {
                    "name": entry.get("name", ""),
                    "mean_corner_error": score.mean_corner_error,
                    "correct": score.correct,
                }
            )
        aggregate = {
            "score": homography_dataset_score(scores),
            "corner_eps": config.corner_eps,
        }
    else:
        raise ValueError(f"unknown eval mode {mode!r}")

    return {"mode": mode, "per_pair": per_pair, "aggregate": aggregate, "config": config.to_dict()}
