"""Landmark-anchored box geometry for region-of-interest crops.

Coordinates are ``(x, y)`` with x growing right and y growing down.
Image-space positions are pixels in the aligned input image; feature-map
positions are continuous pixel units over the map's extent ``[0, W] x
[0, H]``. A box is the 4-vector ``(x1, y1, x2, y2)`` holding its top-left
and bottom-right corners in that order.

The tensor functions at the bottom are the computational core: they accept
arbitrary leading batch dimensions, run on ``torch`` tensors, and are
differentiable (piecewise, across the clamping branches). The dataclass
API wraps them for single-box use in data preparation, visualization and
tests.

Normalized-coordinate convention: a feature-map x maps to ``u = 2x/W - 1``
over the continuous extent ``[0, W]``, so a crop of the full map is exactly
the identity transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from augraph.errors import ConfigError

SIDES = ("left", "right")


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2D fiducial points in aligned-image pixels."""

    points: np.ndarray  # (count, 2) float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigError(f"landmarks must be (count, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("landmarks contain non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class CenterRuleTable:
    """Per-side landmark anchors and pixel offsets for each AU's center.

    ``anchors[s, j]`` is the landmark index for AU ``j`` on side ``s``
    (0 = left, 1 = right); ``offsets[s, j]`` is the ``(dx, dy)`` offset in
    pixels at the reference image scale. Right entries are explicit; no
    implicit mirroring happens anywhere.
    """

    anchors: np.ndarray  # (2, C) int
    offsets: np.ndarray  # (2, C, 2) float

    def __post_init__(self) -> None:
        anchors = np.asarray(self.anchors, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape[0] != 2:
            raise ConfigError(f"anchors must be (2, C), got {anchors.shape}")
        if offsets.shape != anchors.shape + (2,):
            raise ConfigError(
                f"offsets must be (2, C, 2) matching anchors, got {offsets.shape}"
            )
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_aus(self) -> int:
        return int(self.anchors.shape[1])

    def validate_scheme(self, landmark_count: int) -> None:
        if self.anchors.min() < 0 or self.anchors.max() >= landmark_count:
            bad = int(self.anchors.max() if self.anchors.max() >= landmark_count else self.anchors.min())
            raise ConfigError(
                f"rule table references anchor {bad} but the landmark scheme has "
                f"{landmark_count} points"
            )

    @classmethod
    def from_file(cls, path: str | Path) -> "CenterRuleTable":
        """Parse the plain-text rule format.

        One line per entry: ``side au_index anchor_index dx dy`` with
        1-based AU indices and 0-based anchor indices. ``#`` comments and
        blank lines are ignored.
        """
        entries: dict[tuple[int, int], tuple[int, float, float]] = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ConfigError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            side_name, au_s, anchor_s, dx_s, dy_s = parts
            if side_name not in SIDES:
                raise ConfigError(f"{path}:{lineno}: side must be left/right, got {side_name!r}")
            try:
                au = int(au_s)
                anchor = int(anchor_s)
                dx, dy = float(dx_s), float(dy_s)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: malformed numeric field") from exc
            if au < 1:
                raise ConfigError(f"{path}:{lineno}: AU indices are 1-based, got {au}")
            entries[(SIDES.index(side_name), au - 1)] = (anchor, dx, dy)
        if not entries:
            raise ConfigError(f"{path}: no rule entries found")
        c = max(j for _, j in entries) + 1
        anchors = np.zeros((2, c), dtype=np.int64)
        offsets = np.zeros((2, c, 2), dtype=np.float64)
        for s in range(2):
            for j in range(c):
                if (s, j) not in entries:
                    raise ConfigError(
                        f"{path}: missing rule for side={SIDES[s]} au={j + 1}"
                    )
                anchor, dx, dy = entries[(s, j)]
                anchors[s, j] = anchor
                offsets[s, j] = (dx, dy)
        return cls(anchors=anchors, offsets=offsets)

    def to_file(self, path: str | Path) -> None:
        lines = ["# side au_index anchor_index dx dy"]
        for s, side in enumerate(SIDES):
            for j in range(self.num_aus):
                dx, dy = self.offsets[s, j]
                lines.append(f"{side} {j + 1} {int(self.anchors[s, j])} {dx:g} {dy:g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_center_rules() -> CenterRuleTable:
    """The shipped rule table for the 68-point landmark scheme (12 AUs).

    The offsets approximate the customary landmark-to-region relations for
    the twelve commonly benchmarked AUs; they are data, not code, and can
    be replaced by any file in the same format.
    """
    from importlib import resources

    ref = resources.files("augraph").joinpath("resources/center_rules_68.txt")
    with resources.as_file(ref) as path:
        return CenterRuleTable.from_file(path)


@dataclass(frozen=True)
class AffineParams:
    """Axis-aligned crop transform: scales ``(s_x, s_y)`` and normalized
    translations ``(t_x, t_y)``, arranged as a 2x3 matrix."""

    s_x: float
    s_y: float
    t_x: float
    t_y: float

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.s_x, 0.0, self.t_x], [0.0, self.s_y, self.t_y]], dtype=np.float64
        )

    def as_vector(self) -> np.ndarray:
        return np.array([self.s_x, self.s_y, self.t_x, self.t_y], dtype=np.float64)


@dataclass
class RoiBox:
    """One AU's rectangular region on a feature map.

    ``initial`` holds the landmark-derived corners, ``scales`` the four
    learned factors and ``refined`` the corners after refinement and/or
    sanitization. All corner vectors are ``(x1, y1, x2, y2)``.
    """

    au_index: int
    side: str
    level: int
    initial: np.ndarray
    scales: np.ndarray | None = None
    refined: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.initial = np.asarray(self.initial, dtype=np.float64).reshape(4)
        if self.scales is not None:
            self.scales = np.asarray(self.scales, dtype=np.float64).reshape(4)
        if self.refined is not None:
            self.refined = np.asarray(self.refined, dtype=np.float64).reshape(4)


# --------------------------------------------------------------------------
# Single-box operations (dataclass API)
# --------------------------------------------------------------------------


def au_centers(landmarks: LandmarkSet, rules: CenterRuleTable) -> np.ndarray:
    """Compute the two sides' AU center points in image pixels.

    Returns an array of shape (2, C, 2) ordered (side, au, xy) with side 0
    the left entries of the rule table.
    """
    rules.validate_scheme(landmarks.count)
    return landmarks.points[rules.anchors] + rules.offsets


def map_center(
    center: tuple[float, float],
    image_size: tuple[float, float],
    featmap_size: tuple[float, float],
) -> tuple[float, float]:
    """Proportionally map an image point onto a feature map."""
    iw, ih = image_size
    fw, fh = featmap_size
    if min(iw, ih, fw, fh) <= 0:
        raise ConfigError("image and feature-map sizes must be positive")
    return (center[0] * fw / iw, center[1] * fh / ih)


def initial_box(
    center: tuple[float, float], k: float, featmap_size: tuple[float, float]
) -> np.ndarray:
    """Corners of the size-k box around a feature-map center, clipped to the map."""
    if k <= 0:
        raise ConfigError(f"initial box size must be positive, got {k}")
    w, h = featmap_size
    cx, cy = center
    half = k / 2.0
    return np.array(
        [
            min(max(cx - half, 0.0), w),
            min(max(cy - half, 0.0), h),
            min(max(cx + half, 0.0), w),
            min(max(cy + half, 0.0), h),
        ],
        dtype=np.float64,
    )


def refine_box(box: RoiBox, scales: np.ndarray) -> RoiBox:
    """Apply the four scale factors to the initial corners.

    Each refined coordinate is the product of its scale factor with the
    corresponding initial coordinate, measured from the feature-map origin.
    """
    if box.initial is None:
        raise ConfigError("refine_box requires initial corners")
    scales = np.asarray(scales, dtype=np.float64).reshape(4)
    refined = refine_corners(torch.from_numpy(box.initial), torch.from_numpy(scales))
    return replace(box, scales=scales, refined=refined.numpy())


def sanitize_box(
    box: RoiBox, featmap_size: tuple[float, float], min_side: float = 1.0
) -> RoiBox:
    """Clamp the refined corners into the map and enforce a minimum side."""
    corners = box.refined if box.refined is not None else box.initial
    if corners is None:
        raise ConfigError("sanitize_box requires refined or initial corners")
    fixed = sanitize_corners(
        torch.from_numpy(np.asarray(corners)), featmap_size, min_side
    )
    return replace(box, refined=fixed.numpy())


def box_to_affine(box: RoiBox, featmap_size: tuple[float, float]) -> AffineParams:
    """Convert a sanitized box to the crop transform parameters."""
    corners = box.refined if box.refined is not None else box.initial
    vec = corners_to_affine(torch.from_numpy(np.asarray(corners)), featmap_size)
    s_x, s_y, t_x, t_y = (float(v) for v in vec)
    return AffineParams(s_x=s_x, s_y=s_y, t_x=t_x, t_y=t_y)


# --------------------------------------------------------------------------
# Batched tensor core
# --------------------------------------------------------------------------


def refine_corners(corners: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """Elementwise product of corner coordinates with scale factors.

    Both arguments broadcast over leading dimensions; the last dimension is
    the 4-vector (x1, y1, x2, y2) and its matching factors.
    """
    return corners * scales


def _repair_axis(
    lo: torch.Tensor, hi: torch.Tensor, extent: float, min_side: float
) -> tuple[torch.Tensor, torch.Tensor]:
    side = hi - lo
    deficient = side < min_side
    mid = 0.5 * (lo + hi)
    lo = torch.where(deficient, mid - 0.5 * min_side, lo)
    hi = torch.where(deficient, mid + 0.5 * min_side, hi)
    # Shift inward when the expansion overflowed one end. Expansion produces
    # a side of min_side <= extent, so at most one end can overflow.
    shift = (-lo).clamp(min=0.0) - (hi - extent).clamp(min=0.0)
    return lo + shift, hi + shift


def sanitize_corners(
    corners: torch.Tensor, featmap_size: tuple[float, float], min_side: float = 1.0
) -> torch.Tensor:
    """Clamp boxes into the map and repair degenerate or inverted ones.

    Corners are first clamped into ``[0, W] x [0, H]``. Any axis whose side
    is below ``min_side`` (including inverted boxes) is expanded
    symmetrically about its center to ``min_side`` and shifted inward if
    that overflows. Idempotent.
    """
    w, h = float(featmap_size[0]), float(featmap_size[1])
    if min_side <= 0 or min_side > min(w, h):
        raise ConfigError(
            f"min_side must lie in (0, min(W, H)], got {min_side} for map {featmap_size}"
        )
    x1, y1, x2, y2 = corners.unbind(-1)
    x1, x2 = x1.clamp(0.0, w), x2.clamp(0.0, w)
    y1, y2 = y1.clamp(0.0, h), y2.clamp(0.0, h)
    x1, x2 = _repair_axis(x1, x2, w, min_side)
    y1, y2 = _repair_axis(y1, y2, h, min_side)
    return torch.stack([x1, y1, x2, y2], dim=-1)


def corners_to_affine(
    corners: torch.Tensor, featmap_size: tuple[float, float]
) -> torch.Tensor:
    """Crop transform (s_x, s_y, t_x, t_y) for sanitized boxes.

    With the normalized convention ``u = 2x/W - 1``, the scale is the box
    side over the map extent and the translation is the normalized box
    center, so the full-map box yields the identity transform.
    """
    w, h = float(featmap_size[0]), float(featmap_size[1])
    x1, y1, x2, y2 = corners.unbind(-1)
    s_x = (x2 - x1) / w
    t_x = (x1 + x2) / w - 1.0
    s_y = (y2 - y1) / h
    t_y = (y1 + y2) / h - 1.0
    return torch.stack([s_x, s_y, t_x, t_y], dim=-1)


def map_centers(
    centers: torch.Tensor,
    image_size: tuple[float, float],
    featmap_size: tuple[float, float],
) -> torch.Tensor:
    """Batched proportional mapping of (..., 2) image points to map units."""
    iw, ih = float(image_size[0]), float(image_size[1])
    fw, fh = float(featmap_size[0]), float(featmap_size[1])
    return centers * centers.new_tensor([fw / iw, fh / ih])


def initial_corners(
    centers: torch.Tensor, k: float, featmap_size: tuple[float, float]
) -> torch.Tensor:
    """Batched initial boxes: (..., 2) centers to (..., 4) clipped corners."""
    if k <= 0:
        raise ConfigError(f"initial box size must be positive, got {k}")
    w, h = float(featmap_size[0]), float(featmap_size[1])
    half = k / 2.0
    cx, cy = centers.unbind(-1)
    return torch.stack(
        [
            (cx - half).clamp(0.0, w),
            (cy - half).clamp(0.0, h),
            (cx + half).clamp(0.0, w),
            (cy + half).clamp(0.0, h),
        ],
        dim=-1,
    )


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intersection over union of (..., 4) corner boxes (numpy, broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ix = np.maximum(
        0.0, np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    )
    iy = np.maximum(
        0.0, np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    )
    inter = ix * iy
    area_a = np.maximum(0.0, a[..., 2] - a[..., 0]) * np.maximum(0.0, a[..., 3] - a[..., 1])
    area_b = np.maximum(0.0, b[..., 2] - b[..., 0]) * np.maximum(0.0, b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)
