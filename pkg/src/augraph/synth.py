"""Deterministic synthetic benchmark with ground-truth region annotations.

Each sample is a schematic face: an ellipse with per-subject shape and
color, analytic 68-point landmarks, and one distinctive striped ring
pattern per active AU, mirrored left/right and drawn strictly inside that
AU's ground-truth (oracle) box. Oracle boxes are anchored to the same
landmark rules the recognizer uses, jittered per frame, and deliberately
sized so some AUs are larger and some smaller than the fixed region prior,
giving the adaptive mechanism real signal. Ring-styled distractors placed
away from every oracle box break global color shortcuts, and labels come
from a dependency-chain sampler that realizes configurable conditional
probabilities between consecutive AUs.

Randomness is split into independent per-(subject, frame, AU) streams
derived from the config seed, so generation is byte-reproducible and
toggling one AU's label never disturbs anything else in the frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from augraph import config as kvconfig
from augraph.data import FLIP_REMAP_68
from augraph.errors import GenerationError
from augraph.geometry import CenterRuleTable, LandmarkSet, au_centers

IMAGE_SIZE = 200
FACE_CX = 99.5
FACE_CY = 102.0
REF_A = 66.0
REF_B = 80.0

# Per-AU layout: face-relative left-side center (fx, fy in units of the
# reference half-axes), nominal box size (w, h) in pixels, center jitter.
# The first two AUs are oversized and the last three undersized relative to
# the default region priors; the third roughly matches the finest prior.
_LAYOUT = (
    (-1.0227, -0.825, 56.0, 64.0, 3),
    (-1.0227, 0.800, 56.0, 64.0, 3),
    (-1.0227, 0.000, 36.0, 36.0, 3),
    (-0.2954, -0.775, 26.0, 26.0, 2),
    (-0.2954, 0.000, 26.0, 26.0, 2),
    (-0.2954, 0.775, 26.0, 26.0, 2),
)

_AU_COLORS = (
    (208, 44, 44),
    (44, 196, 60),
    (52, 84, 224),
    (224, 204, 40),
    (204, 48, 204),
    (40, 204, 204),
)

_AU_ANGLES = (0.0, 90.0, 45.0, 135.0, 30.0, 120.0)

# Stream ids for the per-purpose random generators.
_STREAM_STYLE = 0
_STREAM_LABELS = 1
_STREAM_BACKGROUND = 3
_STREAM_REGION = 4
_STREAM_PATTERN = 5
_STREAM_DISTRACT = 6


@dataclass
class SynthConfig:
    """Generator parameters; see docs/formats.md for the key=value keys."""

    num_aus: int = 6
    subjects: int = 24
    frames: int = 40
    seed: int = 7
    noise: float = 5.0
    distractor_rate: float = 1.5
    size_jitter: float = 2.0
    marginals: tuple[float, ...] = (0.45, 0.40, 0.50, 0.35, 0.45, 0.40)
    chain: tuple[float, ...] = (0.70, 0.60, 0.35, 0.65, 0.30)
    sizes: tuple[tuple[float, float], ...] = field(default=())
    center_jitter: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not 1 <= self.num_aus <= len(_LAYOUT):
            raise GenerationError(
                f"num_aus must lie in [1, {len(_LAYOUT)}], got {self.num_aus}"
            )
        if self.subjects < 1 or self.frames < 1:
            raise GenerationError("subject and frame counts must be positive")
        c = self.num_aus
        if not self.sizes:
            self.sizes = tuple((w, h) for _, _, w, h, _ in _LAYOUT[:c])
        if not self.center_jitter:
            self.center_jitter = tuple(float(j) for *_, j in _LAYOUT[:c])
        self.marginals = tuple(float(m) for m in self.marginals[:c])
        self.chain = tuple(float(p) for p in self.chain[: max(c - 1, 0)])
        if len(self.marginals) != c or len(self.chain) != c - 1:
            raise GenerationError(
                f"need {c} marginal rates and {c - 1} chain conditionals"
            )
        if len(self.sizes) != c or len(self.center_jitter) != c:
            raise GenerationError(f"need {c} region sizes and jitters")
        self.validate_targets()

    def validate_targets(self) -> None:
        """Check the label targets are realizable by the chain sampler."""
        for j, r in enumerate(self.marginals):
            if not 0.0 < r < 1.0:
                raise GenerationError(
                    f"marginal rate of AU{j + 1} must lie in (0, 1), got {r}"
                )
        for j, c in enumerate(self.chain):
            if not 0.0 <= c <= 1.0:
                raise GenerationError(
                    f"chain conditional p(AU{j + 2}|AU{j + 1}) must lie in [0, 1], got {c}"
                )
            q = self._off_conditional(j)
            if not 0.0 <= q <= 1.0:
                raise GenerationError(
                    f"targets are inconsistent: p(AU{j + 2}=1 | AU{j + 1}=0) would be "
                    f"{q:.3f}; adjust the marginals or the chain conditional"
                )

    def _off_conditional(self, j: int) -> float:
        r_prev, r_next, cond = self.marginals[j], self.marginals[j + 1], self.chain[j]
        return (r_next - cond * r_prev) / (1.0 - r_prev)

    def to_kv(self) -> dict[str, object]:
        return {
            "num_aus": self.num_aus,
            "subjects": self.subjects,
            "frames": self.frames,
            "seed": self.seed,
            "noise": self.noise,
            "distractor_rate": self.distractor_rate,
            "size_jitter": self.size_jitter,
            "marginals": list(self.marginals),
            "chain": list(self.chain),
            "sizes": [f"{w:g}x{h:g}" for w, h in self.sizes],
            "center_jitter": list(self.center_jitter),
        }

    @classmethod
    def from_kv(cls, raw: dict[str, str]) -> "SynthConfig":
        kwargs: dict[str, object] = {}
        for key, value in raw.items():
            if key in ("num_aus", "subjects", "frames", "seed"):
                kwargs[key] = kvconfig.as_int(value, key)
            elif key in ("noise", "distractor_rate", "size_jitter"):
                kwargs[key] = kvconfig.as_float(value, key)
            elif key in ("marginals", "chain", "center_jitter"):
                kwargs[key] = tuple(kvconfig.as_float_list(value, key))
            elif key == "sizes":
                kwargs[key] = tuple(kvconfig.as_pair_list(value, key))
            else:
                raise GenerationError(f"unknown synthetic config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        return cls.from_kv(kvconfig.parse_kv_file(path))


def _stream(cfg_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((cfg_seed,) + key))


# --------------------------------------------------------------------------
# Face geometry
# --------------------------------------------------------------------------


def face_landmarks(a: float = REF_A, b: float = REF_B) -> np.ndarray:
    """Analytic 68-point landmarks for an ellipse face, exactly symmetric
    about the vertical axis through ``FACE_CX``."""
    cx, cy = FACE_CX, FACE_CY
    pts = np.zeros((68, 2), dtype=np.float64)

    # Jaw contour along the lower ellipse arc; symmetric by construction.
    for i in range(17):
        phi = np.pi * i / 16.0
        pts[i] = (cx - a * np.cos(phi), cy + b * np.sin(phi))

    # Left brow (outer to inner).
    brow_x = (0.62, 0.51, 0.40, 0.29, 0.18)
    for i, fx in enumerate(brow_x):
        arch = 0.58 + 0.05 * np.sin(np.pi * i / 4.0)
        pts[17 + i] = (cx - a * fx, cy - b * arch)

    # Nose bridge and nostril row.
    for i in range(27, 31):
        pts[i] = (cx, cy - b * (0.45 - 0.12 * (i - 27)))
    for i, fx in enumerate((-0.16, -0.08, 0.0, 0.08, 0.16)):
        pts[31 + i] = (cx + a * fx, cy - b * 0.02)

    # Left eye hexagon (36 outer corner .. counterclockwise).
    ecx, ecy = cx - 0.36 * a, cy - 0.32 * b
    ew, eh = 0.13 * a, 0.05 * b
    pts[36] = (ecx - ew, ecy)
    pts[37] = (ecx - ew / 3, ecy - eh)
    pts[38] = (ecx + ew / 3, ecy - eh)
    pts[39] = (ecx + ew, ecy)
    pts[40] = (ecx + ew / 3, ecy + eh)
    pts[41] = (ecx - ew / 3, ecy + eh)

    # Mouth: outer ring 48..59, inner ring 60..67; left and center points
    # explicit, right points mirrored below.
    mcx, mcy = cx, cy + 0.52 * b
    rx, ry = 0.30 * a, 0.10 * b
    rx2, ry2 = 0.55 * rx, 0.45 * ry
    pts[48] = (mcx - rx, mcy)
    pts[49] = (mcx - 0.6 * rx, mcy - 0.7 * ry)
    pts[50] = (mcx - 0.25 * rx, mcy - ry)
    pts[51] = (mcx, mcy - ry)
    pts[57] = (mcx, mcy + ry)
    pts[58] = (mcx - 0.25 * rx, mcy + ry)
    pts[59] = (mcx - 0.6 * rx, mcy + 0.7 * ry)
    pts[60] = (mcx - rx2, mcy)
    pts[61] = (mcx - 0.3 * rx2, mcy - ry2)
    pts[62] = (mcx, mcy - ry2)
    pts[66] = (mcx, mcy + ry2)
    pts[67] = (mcx - 0.3 * rx2, mcy + ry2)

    # Right-side points are exact mirrors of their left twins.
    for left in (17, 18, 19, 20, 21, 36, 37, 38, 39, 40, 41,
                 48, 49, 50, 58, 59, 60, 61, 67):
        right = FLIP_REMAP_68[left]
        pts[right] = (2 * cx - pts[left][0], pts[left][1])
    return pts


def synthetic_rules(num_aus: int) -> CenterRuleTable:
    """Landmark rules realizing the layout on the reference face.

    Each left target picks its nearest reference landmark as the anchor;
    the right entry uses the mirror-twin anchor with a mirrored offset.
    """
    ref = face_landmarks()
    anchors = np.zeros((2, num_aus), dtype=np.int64)
    offsets = np.zeros((2, num_aus, 2), dtype=np.float64)
    for j in range(num_aus):
        fx, fy, *_ = _LAYOUT[j]
        target = np.array([FACE_CX + fx * REF_A, FACE_CY + fy * REF_B])
        anchor = int(np.argmin(np.linalg.norm(ref - target, axis=1)))
        dx, dy = target - ref[anchor]
        anchors[0, j] = anchor
        offsets[0, j] = (dx, dy)
        anchors[1, j] = FLIP_REMAP_68[anchor]
        offsets[1, j] = (-dx, dy)
    return CenterRuleTable(anchors=anchors, offsets=offsets)


# --------------------------------------------------------------------------
# Labels
# --------------------------------------------------------------------------


def sample_labels(cfg: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw (n, C) labels from the dependency chain."""
    c = cfg.num_aus
    out = np.zeros((n, c), dtype=np.int64)
    out[:, 0] = rng.random(n) < cfg.marginals[0]
    for j in range(c - 1):
        on = cfg.chain[j]
        off = cfg._off_conditional(j)
        prob = np.where(out[:, j] == 1, on, off)
        out[:, j + 1] = rng.random(n) < prob
    return out


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubjectStyle:
    a: float
    b: float
    skin: np.ndarray
    background: np.ndarray


def subject_style(cfg: SynthConfig, subject: int) -> SubjectStyle:
    rng = _stream(cfg.seed, _STREAM_STYLE, subject)
    return SubjectStyle(
        a=REF_A * rng.uniform(0.96, 1.04),
        b=REF_B * rng.uniform(0.96, 1.04),
        skin=rng.uniform(165, 200, size=3) * np.array([1.0, 0.92, 0.84]),
        background=rng.uniform(95, 140, size=3),
    )


def _local_grid(
    x_lo: float, x_hi: float, y_lo: float, y_hi: float
) -> tuple[slice, slice, np.ndarray, np.ndarray]:
    """Pixel-center coordinate patch covering a bounding box (clipped)."""
    i0 = max(int(np.floor(x_lo)), 0)
    i1 = min(int(np.ceil(x_hi)) + 1, IMAGE_SIZE)
    j0 = max(int(np.floor(y_lo)), 0)
    j1 = min(int(np.ceil(y_hi)) + 1, IMAGE_SIZE)
    i1, j1 = max(i1, i0), max(j1, j0)
    xs = np.arange(i0, i1, dtype=np.float64) + 0.5
    ys = np.arange(j0, j1, dtype=np.float64) + 0.5
    return slice(j0, j1), slice(i0, i1), xs[None, :], ys[:, None]


def _fill_ellipse(img, cx, cy, rx, ry, color, alpha=1.0) -> None:
    rows, cols, xs, ys = _local_grid(cx - rx, cx + rx, cy - ry, cy + ry)
    mask = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    patch = img[rows, cols]
    patch[mask] = (1 - alpha) * patch[mask] + alpha * np.asarray(color, dtype=np.float64)


def _draw_ring_pattern(
    img: np.ndarray,
    box: np.ndarray,
    au: int,
    mirrored: bool,
    phase: float,
) -> None:
    """Striped rectangular ring strictly inside ``box`` (1 px safety inset)."""
    x1, y1, x2, y2 = box
    thickness = float(np.clip(0.22 * min(x2 - x1, y2 - y1), 3.0, 12.0))
    rows, cols, xs, ys = _local_grid(x1, x2, y1, y2)
    edge = np.minimum(np.minimum(xs - x1, x2 - xs), np.minimum(ys - y1, y2 - ys))
    ring = (edge >= 1.0) & (edge <= 1.0 + thickness)
    if not ring.any():
        return
    angle = np.deg2rad(_AU_ANGLES[au])
    if mirrored:
        angle = np.pi - angle
    coord = xs * np.cos(angle) + ys * np.sin(angle) + phase
    stripes = (coord / 7.0) % 1.0 < 0.65
    mask = ring & stripes
    color = np.asarray(_AU_COLORS[au], dtype=np.float64)
    patch = img[rows, cols]
    patch[mask] = 0.12 * patch[mask] + 0.88 * color


def _boxes_overlap(a: np.ndarray, b: np.ndarray, margin: float = 0.0) -> bool:
    return not (
        a[2] + margin <= b[0]
        or b[2] + margin <= a[0]
        or a[3] + margin <= b[1]
        or b[3] + margin <= a[1]
    )


def oracle_boxes(
    cfg: SynthConfig, subject: int, frame: int, landmarks: np.ndarray,
    rules: CenterRuleTable,
) -> np.ndarray:
    """Per-sample ground-truth boxes, shape (C, 2, 4), mirrored jitter."""
    centers = au_centers(LandmarkSet(landmarks), rules)  # (2, C, 2)
    boxes = np.zeros((cfg.num_aus, 2, 4), dtype=np.float64)
    for j in range(cfg.num_aus):
        rng = _stream(cfg.seed, _STREAM_REGION, subject, frame, j)
        jx = rng.uniform(-cfg.center_jitter[j], cfg.center_jitter[j])
        jy = rng.uniform(-cfg.center_jitter[j], cfg.center_jitter[j])
        w = cfg.sizes[j][0] + rng.uniform(-cfg.size_jitter, cfg.size_jitter)
        h = cfg.sizes[j][1] + rng.uniform(-cfg.size_jitter, cfg.size_jitter)
        for side, sign in ((0, 1.0), (1, -1.0)):
            cx = centers[side, j, 0] + sign * jx
            cy = centers[side, j, 1] + jy
            box = np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
            boxes[j, side] = np.clip(box, 1.0, IMAGE_SIZE - 1.0)
    flat = boxes.reshape(-1, 4)
    for p in range(len(flat)):
        for q in range(p + 1, len(flat)):
            if p // 2 == q // 2:
                continue  # the two sides of one AU may touch each other
            if _boxes_overlap(flat[p], flat[q]):
                raise GenerationError(
                    f"oracle regions overlap for subject {subject} frame {frame}: "
                    f"AU{p // 2 + 1} vs AU{q // 2 + 1}; reduce sizes or jitter"
                )
    return boxes


def render_sample(
    cfg: SynthConfig,
    subject: int,
    frame: int,
    labels: np.ndarray,
    rules: CenterRuleTable,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render one frame; returns (image uint8, landmarks, oracle boxes)."""
    style = subject_style(cfg, subject)
    landmarks = face_landmarks(style.a, style.b)
    rng_bg = _stream(cfg.seed, _STREAM_BACKGROUND, subject, frame)

    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float64)
    img[:] = style.background
    col = np.arange(IMAGE_SIZE, dtype=np.float64) + 0.5
    img += ((col[:, None, None] - 100.0) / 100.0) * rng_bg.uniform(-12, 12, size=3)
    for _ in range(rng_bg.integers(2, 5)):
        bx, by = rng_bg.uniform(0, IMAGE_SIZE, size=2)
        sigma = rng_bg.uniform(12, 32)
        amp = rng_bg.uniform(-16, 16, size=3)
        rows, cols, xs, ys = _local_grid(
            bx - 3 * sigma, bx + 3 * sigma, by - 3 * sigma, by + 3 * sigma
        )
        bump = np.exp(-(((xs - bx) ** 2 + (ys - by) ** 2) / (2 * sigma**2)))
        img[rows, cols] += amp * bump[..., None]

    # Schematic face: ellipse, rim, eyes, brows, nose, mouth.
    cx, cy, a, b = FACE_CX, FACE_CY, style.a, style.b
    rows, cols, xs, ys = _local_grid(cx - a, cx + a, cy - b, cy + b)
    rim = ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2
    patch = img[rows, cols]
    patch[rim <= 1.0] = style.skin
    patch[(rim <= 1.0) & (rim >= 0.92)] = style.skin * 0.82
    for eye in (36, 42):
        center = landmarks[eye : eye + 6].mean(axis=0)
        _fill_ellipse(img, center[0], center[1], 0.11 * a, 0.05 * b, (45, 38, 38))
    for brow in (17, 22):
        seg = landmarks[brow : brow + 5]
        for t in np.linspace(0, 1, 17):
            idx = t * (len(seg) - 1)
            lo = int(np.floor(idx))
            hi = min(lo + 1, len(seg) - 1)
            p = seg[lo] + (idx - lo) * (seg[hi] - seg[lo])
            _fill_ellipse(img, p[0], p[1], 2.2, 2.2, (70, 55, 45))
    _fill_ellipse(img, cx, cy - 0.22 * b, 1.6, 0.24 * b, style.skin * 0.75)
    mouth = landmarks[48:60]
    mcx, mcy = mouth.mean(axis=0)
    _fill_ellipse(img, mcx, mcy, 0.30 * a, 0.10 * b, (150, 70, 70))
    _fill_ellipse(img, mcx, mcy, 0.55 * 0.30 * a, 0.45 * 0.10 * b, style.skin * 0.9)

    boxes = oracle_boxes(cfg, subject, frame, landmarks, rules)
    for j in range(cfg.num_aus):
        if labels[j] != 1:
            continue
        rng_pat = _stream(cfg.seed, _STREAM_PATTERN, subject, frame, j)
        phase = rng_pat.uniform(0, 7)
        _draw_ring_pattern(img, boxes[j, 0], j, mirrored=False, phase=phase)
        _draw_ring_pattern(img, boxes[j, 1], j, mirrored=True, phase=phase)

    rng_d = _stream(cfg.seed, _STREAM_DISTRACT, subject, frame)
    for _ in range(min(int(rng_d.poisson(cfg.distractor_rate)), 3)):
        for _attempt in range(40):
            size = rng_d.uniform(22, 44)
            dcx = rng_d.uniform(size / 2, IMAGE_SIZE - size / 2)
            dcy = rng_d.uniform(size / 2, IMAGE_SIZE - size / 2)
            dbox = np.array([dcx - size / 2, dcy - size / 2, dcx + size / 2, dcy + size / 2])
            if not any(
                _boxes_overlap(dbox, boxes[j, s], margin=6.0)
                for j in range(cfg.num_aus)
                for s in range(2)
            ):
                au = int(rng_d.integers(0, cfg.num_aus))
                _draw_ring_pattern(
                    img, dbox, au,
                    mirrored=bool(rng_d.integers(0, 2)),
                    phase=rng_d.uniform(0, 7),
                )
                break

    img *= rng_bg.uniform(0.90, 1.10)
    img += rng_bg.normal(0.0, cfg.noise, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), landmarks, boxes


# --------------------------------------------------------------------------
# Dataset emission
# --------------------------------------------------------------------------


def subject_name(index: int) -> str:
    return f"s{index:03d}"


def frame_name(index: int) -> str:
    return f"f{index:03d}"


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> dict:
    """Write the full dataset directory; returns a small summary dict."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rules = synthetic_rules(cfg.num_aus)
    c = cfg.num_aus

    label_lines = ["subject,frame," + ",".join(f"AU{j + 1}" for j in range(c))]
    lm_lines = [
        "subject,frame,"
        + ",".join(f"x{i + 1},y{i + 1}" for i in range(68))
    ]
    oracle_lines = [
        "subject,frame,"
        + ",".join(
            f"AU{j + 1}_{side}_{coord}"
            for j in range(c)
            for side in ("left", "right")
            for coord in ("x1", "y1", "x2", "y2")
        )
    ]
    all_labels = []
    for s in range(cfg.subjects):
        for f in range(cfg.frames):
            labels = sample_labels(cfg, 1, _stream(cfg.seed, _STREAM_LABELS, s, f))[0]
            all_labels.append(labels)
            img, landmarks, boxes = render_sample(cfg, s, f, labels, rules)
            name_s, name_f = subject_name(s), frame_name(f)
            Image.fromarray(img).save(out / "images" / f"{name_s}_{name_f}.png")
            label_lines.append(
                f"{name_s},{name_f}," + ",".join(str(int(v)) for v in labels)
            )
            lm_lines.append(
                f"{name_s},{name_f},"
                + ",".join(f"{v:.3f}" for v in landmarks.reshape(-1))
            )
            oracle_lines.append(
                f"{name_s},{name_f},"
                + ",".join(f"{v:.3f}" for v in boxes.reshape(-1))
            )
    (out / "labels.csv").write_text("\n".join(label_lines) + "\n", encoding="utf-8")
    (out / "landmarks.csv").write_text("\n".join(lm_lines) + "\n", encoding="utf-8")
    (out / "oracle_regions.csv").write_text("\n".join(oracle_lines) + "\n", encoding="utf-8")
    rules.to_file(out / "center_rules.txt")
    kvconfig.write_kv_file(out / "synth_config.txt", cfg.to_kv())

    labels_mat = np.stack(all_labels)
    return {
        "samples": int(labels_mat.shape[0]),
        "empirical_rates": labels_mat.mean(axis=0).tolist(),
        "empirical_chain": empirical_chain(labels_mat).tolist(),
    }


def empirical_chain(labels: np.ndarray) -> np.ndarray:
    """Measured p(AU_{j+1}=1 | AU_j=1) for consecutive AU pairs."""
    c = labels.shape[1]
    out = np.zeros(max(c - 1, 0), dtype=np.float64)
    for j in range(c - 1):
        on = labels[:, j] == 1
        out[j] = labels[on, j + 1].mean() if on.any() else 0.0
    return out


def mismatched_pairs(
    cfg: SynthConfig,
    roi_sizes: tuple[float, ...],
    input_size: int = 192,
    threshold: float = 0.25,
) -> list[tuple[int, int]]:
    """(au, level) pairs whose oracle area differs from the prior's by more
    than ``threshold`` relatively (the adaptive mechanism's target set)."""
    strides = (8, 16, 32)
    pairs = []
    for level, k in enumerate(roi_sizes):
        prior_area = (k * strides[level]) ** 2
        for j, (w, h) in enumerate(cfg.sizes):
            if abs(w * h - prior_area) / prior_area >= threshold:
                pairs.append((j, level))
    return pairs
