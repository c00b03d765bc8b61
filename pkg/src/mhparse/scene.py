"""Synthetic multi-person scenes with instance-aware part labels.

Each person is a layered assembly of part shapes (head, hair, torso,
arms, legs, shoes and optional accessories) drawn with the 18 part
categories. Every person carries its own chroma tint, while the part
category controls luminance; persons are placed with a configurable
horizontal overlap so that entangled instances occur routinely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CATEGORIES = (
    "background",
    "hat", "hair", "sunglasses", "upper-clothes", "skirt", "pants", "dress",
    "belt", "left-shoe", "right-shoe", "face", "left-leg", "right-leg",
    "left-arm", "right-arm", "bag", "scarf", "torso-skin",
)
NUM_CLASSES = len(CATEGORIES)
CAT = {name: i for i, name in enumerate(CATEGORIES)}

# luminance of each category; background uses its own texture
_LUMA = np.array([
    0.0,
    0.30, 0.18, 0.10, 0.62, 0.52, 0.40, 0.58,
    0.26, 0.14, 0.20, 0.80, 0.70, 0.74, 0.76, 0.72,
    0.34, 0.46, 0.84,
])


class SceneError(ValueError):
    pass


class GenerationError(SceneError):
    pass


class SceneFormatError(SceneError):
    """Malformed scene or prediction file."""

    def __init__(self, message, line=None, column=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.column = column
        self.path = path


class InvariantError(SceneFormatError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    min_persons: int = 2
    max_persons: int = 6
    seed: int = 0
    superpixel_target_size: int = 32
    overlap: float = 0.3
    count_decay: float = 0.5

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("height and width must be >= 32")
        if not 2 <= self.min_persons <= self.max_persons <= 16:
            raise ValueError("need 2 <= min_persons <= max_persons <= 16")
        if self.superpixel_target_size < 4:
            raise ValueError("superpixel_target_size must be >= 4")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")


@dataclass
class LabeledScene:
    image: np.ndarray          # H x W x 3 in [0, 1]
    person_masks: list         # P boolean H x W arrays
    part_labels: np.ndarray    # H x W ints in [0, NUM_CLASSES)
    meta: dict = field(default_factory=dict)

    @property
    def person_count(self) -> int:
        return len(self.person_masks)

    @property
    def shape(self):
        return self.part_labels.shape

    def validate(self):
        h, w = self.part_labels.shape
        if self.image.shape != (h, w, 3):
            raise InvariantError(f"image shape {self.image.shape} does not match labels {(h, w)}")
        if not self.person_masks:
            raise InvariantError("scene has no persons")
        stack = np.stack([np.asarray(m, dtype=bool) for m in self.person_masks])
        if stack.shape[1:] != (h, w):
            raise InvariantError("person mask shape does not match labels")
        if (stack.sum(axis=0) > 1).any():
            raise InvariantError("person masks overlap")
        fg = stack.any(axis=0)
        if not np.array_equal(fg, self.part_labels > 0):
            raise InvariantError("part labels disagree with the union of person masks")
        if self.part_labels.min() < 0 or self.part_labels.max() >= NUM_CLASSES:
            raise InvariantError("part label out of range")
        return self

    def instance_map(self) -> np.ndarray:
        """Per-pixel person id (0 for background)."""
        out = np.zeros(self.part_labels.shape, dtype=np.int64)
        for i, m in enumerate(self.person_masks, start=1):
            out[np.asarray(m, dtype=bool)] = i
        return out

    def equals(self, other) -> bool:
        return (
            np.array_equal(self.image, other.image)
            and np.array_equal(self.part_labels, other.part_labels)
            and len(self.person_masks) == len(other.person_masks)
            and all(np.array_equal(a, b) for a, b in zip(self.person_masks, other.person_masks))
        )


# ---------------------------------------------------------------- drawing

def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _rect(yy, xx, y0, y1, x0, x1):
    return (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)


def _draw_person(shape, cy_top, cx, height, rng):
    """Part label canvas (0 = empty) for one upright person."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    canvas = np.zeros(shape, dtype=np.int64)
    u = height / 10.0
    head_r = 1.0 * u
    head_cy = cy_top + head_r
    torso_top = head_cy + head_r * 0.9
    torso_bot = torso_top + 3.4 * u
    legs_bot = cy_top + height - 0.6 * u
    half_w = 1.25 * u

    def put(mask, cat):
        canvas[mask] = CAT[cat]

    # arms sit behind the torso
    arm_w = 0.6 * u
    put(_rect(yy, xx, torso_top + 0.2 * u, torso_bot + 0.8 * u, cx - half_w - arm_w, cx - half_w), "right-arm")
    put(_rect(yy, xx, torso_top + 0.2 * u, torso_bot + 0.8 * u, cx + half_w, cx + half_w + arm_w), "left-arm")

    legs = rng.choice(["pants", "legs", "skirt"], p=[0.45, 0.25, 0.30])
    leg_gap = 0.15 * u
    rl = _rect(yy, xx, torso_bot, legs_bot, cx - half_w * 0.85, cx - leg_gap)
    ll = _rect(yy, xx, torso_bot, legs_bot, cx + leg_gap, cx + half_w * 0.85)
    put(rl, "right-leg")
    put(ll, "left-leg")
    if legs == "pants":
        put(_rect(yy, xx, torso_bot, legs_bot - 1.5 * u, cx - half_w * 0.85, cx - leg_gap), "pants")
        put(_rect(yy, xx, torso_bot, legs_bot - 1.5 * u, cx + leg_gap, cx + half_w * 0.85), "pants")
    elif legs == "skirt":
        put(_rect(yy, xx, torso_bot - 0.2 * u, torso_bot + 1.6 * u, cx - half_w * 1.1, cx + half_w * 1.1), "skirt")

    put(_rect(yy, xx, legs_bot, legs_bot + 0.6 * u, cx - half_w * 0.95, cx - leg_gap), "right-shoe")
    put(_rect(yy, xx, legs_bot, legs_bot + 0.6 * u, cx + leg_gap, cx + half_w * 0.95), "left-shoe")

    dress = legs != "pants" and rng.random() < 0.35
    torso = _rect(yy, xx, torso_top, torso_bot, cx - half_w, cx + half_w)
    put(torso, "dress" if dress else "upper-clothes")
    if dress:
        put(_rect(yy, xx, torso_bot - 0.2 * u, torso_bot + 1.8 * u, cx - half_w * 1.15, cx + half_w * 1.15), "dress")
    put(_rect(yy, xx, torso_top, torso_top + 0.6 * u, cx - 0.45 * u, cx + 0.45 * u), "torso-skin")
    if rng.random() < 0.3:
        put(_rect(yy, xx, torso_bot - 0.45 * u, torso_bot, cx - half_w, cx + half_w), "belt")
    if rng.random() < 0.25:
        put(_rect(yy, xx, torso_top, torso_top + 0.7 * u, cx - half_w * 0.9, cx + half_w * 0.9), "scarf")

    put(_ellipse(yy, xx, head_cy, cx, head_r, head_r * 0.85), "face")
    put(_ellipse(yy, xx, head_cy - 0.45 * u, cx, head_r * 0.65, head_r * 0.95) & (yy < head_cy - 0.1 * u), "hair")
    if rng.random() < 0.3:
        put(_rect(yy, xx, head_cy - 0.15 * u, head_cy + 0.25 * u, cx - 0.75 * u, cx + 0.75 * u), "sunglasses")
    if rng.random() < 0.3:
        put(_rect(yy, xx, cy_top - 0.3 * u, cy_top + 0.5 * u, cx - 1.0 * u, cx + 1.0 * u), "hat")
    if rng.random() < 0.2:
        side = 1.0 if rng.random() < 0.5 else -1.0
        bx = cx + side * (half_w + arm_w + 0.6 * u)
        put(_rect(yy, xx, torso_bot - 1.2 * u, torso_bot + 0.6 * u, bx - 0.7 * u, bx + 0.7 * u), "bag")
    return canvas


def _tint(hue, saturation):
    # chroma vector orthogonal to the gray axis
    e1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    e2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
    return saturation * (np.cos(hue) * e1 + np.sin(hue) * e2)


def sample_person_count(cfg: SceneConfig, rng) -> int:
    ks = np.arange(cfg.min_persons, cfg.max_persons + 1)
    p = cfg.count_decay ** (ks - cfg.min_persons)
    return int(rng.choice(ks, p=p / p.sum()))


def generate_scene(cfg: SceneConfig, seed: int | None = None, max_tries: int = 50) -> LabeledScene:
    """Deterministic scene for ``(cfg, seed)``; ``seed`` defaults to ``cfg.seed``."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 7919])
    h, w = cfg.height, cfg.width
    n = sample_person_count(cfg, rng)
    min_visible = max(3 * cfg.superpixel_target_size, 40)

    for _ in range(max_tries):
        height = rng.uniform(0.55, 0.85) * h
        if n > 3:
            height *= (3.0 / n) ** 0.35
        pw = 0.35 * height
        spacing = pw * (1.0 - cfg.overlap)
        span = spacing * (n - 1)
        x_start = rng.uniform(pw * 0.5, max(pw * 0.5, w - pw * 0.5 - span) + 1e-9)
        canvases = []
        for i in range(n):
            cx = x_start + i * spacing + rng.normal(0.0, 0.15 * pw)
            top = rng.uniform(0.0, max(0.0, h - height))
            canvases.append(_draw_person((h, w), top, cx, height, rng))
        # random depth order; nearer persons occlude farther ones
        depth = rng.permutation(n)
        owner = np.zeros((h, w), dtype=np.int64)
        labels = np.zeros((h, w), dtype=np.int64)
        for i in depth:
            m = canvases[i] > 0
            owner[m] = i + 1
            labels[m] = canvases[i][m]
        masks = [owner == i + 1 for i in range(n)]
        ok = True
        for m in masks:
            if m.sum() < min_visible:
                ok = False
                break
            lab, ncomp = ndimage.label(m)
            if ncomp > 1:
                sizes = np.bincount(lab.ravel())[1:]
                if sizes.max() < 0.8 * m.sum():
                    ok = False
                    break
        if ok:
            break
    else:
        raise GenerationError(f"could not place {n} visible persons in a {h}x{w} scene")

    image = _render(labels, owner, n, rng)
    scene = LabeledScene(image=image, person_masks=masks, part_labels=labels,
                         meta={"seed": int(seed)})
    return scene.validate()


def _render(labels, owner, n, rng):
    h, w = labels.shape
    # smooth low-chroma background
    noise = ndimage.gaussian_filter(rng.normal(size=(h, w)), 4.0)
    noise = (noise - noise.mean()) / (noise.std() + 1e-9)
    img = np.empty((h, w, 3))
    img[...] = (0.45 + 0.12 * noise)[..., None]
    img += _tint(rng.uniform(0, 2 * np.pi), 0.04)
    hue0 = rng.uniform(0, 2 * np.pi)
    order = rng.permutation(n)
    for i in range(n):
        m = owner == i + 1
        hue = hue0 + 2 * np.pi * order[i] / n
        tint = _tint(hue, 0.32)
        img[m] = _LUMA[labels[m]][:, None] + tint
    img += rng.normal(0.0, 0.015, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255.0) / 255.0


# ------------------------------------------------------------- superpixels

@dataclass
class SuperpixelMap:
    assignment: np.ndarray   # H x W ints in [0, n)
    n: int

    def sizes(self):
        return np.bincount(self.assignment.ravel(), minlength=self.n)


def make_superpixels(image, target_size: int = 32, compactness: float = 0.06,
                     iterations: int = 8) -> SuperpixelMap:
    """Grid-seeded local clustering of pixels on colour and position.

    Accepts a LabeledScene or an H x W x 3 image. Centres start on a regular
    grid of step ``sqrt(target_size)``; every pixel joins the nearest centre
    within a two-step window under the combined distance
    ``|dc|^2 / compactness^2 + |dp|^2 / step^2``. Afterwards each label is
    split into 4-connected components and fragments smaller than a quarter of
    the target size are merged into a neighbour.
    """
    if target_size < 4:
        raise ValueError("target_size must be >= 4")
    image = image.image if isinstance(image, LabeledScene) else np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    step = np.sqrt(target_size)
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    cy = (np.arange(ny) + 0.5) * h / ny - 0.5
    cx = (np.arange(nx) + 0.5) * w / nx - 0.5
    gy, gx = np.meshgrid(cy, cx, indexing="ij")
    pos_c = np.stack([gy.ravel(), gx.ravel()], axis=1)
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    col = image.reshape(-1, 3)
    col_c = col[np.clip(np.round(pos_c[:, 0]).astype(int), 0, h - 1) * w
                + np.clip(np.round(pos_c[:, 1]).astype(int), 0, w - 1)].copy()
    sy, sx = h / ny, w / nx
    labels = None
    for _ in range(iterations):
        ps, pcs = pos / np.array([sy, sx]), pos_c / np.array([sy, sx])
        dp = _sqdist(ps, pcs)
        window = (np.abs(pos[:, None, 0] - pos_c[None, :, 0]) <= 2 * sy) & \
                 (np.abs(pos[:, None, 1] - pos_c[None, :, 1]) <= 2 * sx)
        dc = _sqdist(col, col_c) / compactness ** 2
        d = np.where(window, dc + dp, np.inf)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=len(pos_c))
        keep = counts > 0
        sums_p = np.zeros_like(pos_c)
        sums_c = np.zeros_like(col_c)
        np.add.at(sums_p, labels, pos)
        np.add.at(sums_c, labels, col)
        pos_c[keep] = sums_p[keep] / counts[keep, None]
        col_c[keep] = sums_c[keep] / counts[keep, None]
    assignment = _enforce_connectivity(labels.reshape(h, w), max(1, target_size // 4))
    return SuperpixelMap(assignment=assignment, n=int(assignment.max()) + 1)


def _sqdist(a, b):
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T, 0.0)


_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _enforce_connectivity(labels, min_size):
    h, w = labels.shape
    out = np.zeros((h, w), dtype=np.int64)
    nxt = 0
    for lab in np.unique(labels):
        comp, k = ndimage.label(labels == lab, structure=_FOUR)
        for c in range(1, k + 1):
            out[comp == c] = nxt
            nxt += 1
    # merge small fragments into the neighbour sharing the longest border
    while True:
        sizes = np.bincount(out.ravel(), minlength=nxt)
        small = [s for s in np.flatnonzero((sizes > 0) & (sizes < min_size))]
        if not small or (sizes > 0).sum() == 1:
            break
        s = int(small[np.argmin(sizes[small])])
        m = out == s
        ring = ndimage.binary_dilation(m, structure=_FOUR) & ~m
        neigh = out[ring]
        if neigh.size == 0:
            break
        vals, cnt = np.unique(neigh, return_counts=True)
        out[m] = vals[np.argmax(cnt)]
    _, relabeled = np.unique(out, return_inverse=True)
    return relabeled.reshape(h, w).astype(np.int64)


def superpixel_adjacency(sp: SuperpixelMap) -> np.ndarray:
    """N x N shared-border pixel counts between 4-neighbouring superpixels."""
    a = sp.assignment
    adj = np.zeros((sp.n, sp.n), dtype=np.int64)
    for p, q in ((a[:, :-1], a[:, 1:]), (a[:-1, :], a[1:, :])):
        diff = p != q
        np.add.at(adj, (p[diff], q[diff]), 1)
        np.add.at(adj, (q[diff], p[diff]), 1)
    return adj


# ------------------------------------------------------------------ files

def rle_encode_row(row):
    """``[value, length, value, length, ...]`` runs of one row."""
    row = np.asarray(row)
    if row.size == 0:
        return []
    cuts = np.flatnonzero(row[1:] != row[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [row.size]))
    out = []
    for s, e in zip(starts, ends):
        out.extend((int(row[s]), int(e - s)))
    return out


def rle_encode(arr):
    return [rle_encode_row(r) for r in np.asarray(arr)]


def rle_decode(rows, shape, what="mask"):
    h, w = shape
    if not isinstance(rows, list) or len(rows) != h:
        raise SceneFormatError(f"{what}: expected {h} encoded rows")
    out = np.zeros((h, w), dtype=np.int64)
    for y, runs in enumerate(rows):
        if not isinstance(runs, list) or len(runs) % 2:
            raise SceneFormatError(f"{what}: row {y} is not a value/length list")
        x = 0
        for v, n in zip(runs[::2], runs[1::2]):
            if not isinstance(v, int) or not isinstance(n, int) or n <= 0:
                raise SceneFormatError(f"{what}: row {y} has an invalid run")
            out[y, x:x + n] = v
            x += n
        if x != w:
            raise SceneFormatError(f"{what}: row {y} covers {x} of {w} pixels")
    return out


def scene_to_dict(scene: LabeledScene) -> dict:
    h, w = scene.shape
    pix = np.round(scene.image * 255.0).astype(int)
    return {
        "format": "mhparse-scene",
        "version": 1,
        "height": int(h),
        "width": int(w),
        "person_count": scene.person_count,
        "image": [[int(v) for v in row.ravel()] for row in pix],
        "part_labels": rle_encode(scene.part_labels),
        "person_masks": [rle_encode(m.astype(np.int64)) for m in scene.person_masks],
        "meta": scene.meta,
    }


def _loads(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno, path) from None


def _require(doc, key, kind, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SceneFormatError(f"missing field {key!r}", path=path)
    if not isinstance(doc[key], kind):
        raise SceneFormatError(f"field {key!r} has the wrong type", path=path)
    return doc[key]


def scene_from_dict(doc, path=None) -> LabeledScene:
    if _require(doc, "format", str, path) != "mhparse-scene":
        raise SceneFormatError("not a scene file", path=path)
    h = _require(doc, "height", int, path)
    w = _require(doc, "width", int, path)
    rows = _require(doc, "image", list, path)
    if len(rows) != h or any(not isinstance(r, list) or len(r) != 3 * w for r in rows):
        raise SceneFormatError("image block has the wrong size", path=path)
    pix = np.array(rows)
    if pix.dtype.kind != "i" or pix.min() < 0 or pix.max() > 255:
        raise SceneFormatError("image values must be integers in [0, 255]", path=path)
    image = pix.reshape(h, w, 3) / 255.0
    try:
        labels = rle_decode(_require(doc, "part_labels", list, path), (h, w), "part_labels")
        masks = [rle_decode(m, (h, w), f"person_masks[{i}]").astype(bool)
                 for i, m in enumerate(_require(doc, "person_masks", list, path))]
    except SceneFormatError as exc:
        raise SceneFormatError(str(exc), path=path) from None
    if doc.get("person_count", len(masks)) != len(masks):
        raise InvariantError("person_count does not match the number of masks", path=path)
    scene = LabeledScene(image=image, person_masks=masks, part_labels=labels, meta=doc.get("meta", {}))
    try:
        scene.validate()
    except InvariantError as exc:
        raise InvariantError(str(exc), path=path) from None
    return scene


def save_scene(scene: LabeledScene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, separators=(",", ":"))
        fh.write("\n")


def load_scene(path) -> LabeledScene:
    with open(path) as fh:
        text = fh.read()
    return scene_from_dict(_loads(text, path), path)


def bounding_box(mask):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())
