"""On-disk dataset contract, subject-independent folds, augmentation.

A dataset directory holds::

    images/<subject>_<frame>.png   aligned 8-bit RGB faces, one size for all
    labels.csv                     header: subject,frame,AU1..AUC; 0/1 cells
    landmarks.csv                  header: subject,frame,x1,y1,...,xL,yL
    oracle_regions.csv             optional; ground-truth region boxes
    center_rules.txt               optional; AU center rule table

The oracle file mirrors the labels grammar: after ``subject,frame`` it
carries ``AU<j>_<side>_<x1|y1|x2|y2>`` columns for every AU and side, in
original-image pixels. Loading is strict: malformed rows raise
:class:`~augraph.errors.DataError` naming the offender.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from augraph.errors import ConfigError, DataError
from augraph.geometry import SIDES, CenterRuleTable


@dataclass
class Sample:
    """One aligned face image with its landmarks and AU labels."""

    subject: str
    frame: str
    image: np.ndarray  # (H, W, 3) uint8
    landmarks: np.ndarray  # (L, 2) float64
    labels: np.ndarray  # (C,) int64


@dataclass
class Dataset:
    root: Path
    samples: list[Sample]
    num_aus: int
    landmark_count: int
    image_size: int
    rules: CenterRuleTable | None = None
    oracle: dict[tuple[str, str], np.ndarray] | None = None  # (C, 2, 4) boxes

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def subjects(self) -> list[str]:
        return sorted({s.subject for s in self.samples})

    def labels_matrix(self, indices: np.ndarray | list[int] | None = None) -> np.ndarray:
        rows = self.samples if indices is None else [self.samples[i] for i in indices]
        return np.stack([s.labels for s in rows]) if rows else np.zeros((0, self.num_aus), dtype=np.int64)

    def indices_for_subjects(self, subjects: set[str]) -> np.ndarray:
        return np.array(
            [i for i, s in enumerate(self.samples) if s.subject in subjects], dtype=np.int64
        )


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise DataError(f"missing required file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        return header, [row for row in reader if row]


def load_dataset(root: str | Path) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory does not exist: {root}")

    header, label_rows = _read_rows(root / "labels.csv")
    if len(header) < 3 or header[:2] != ["subject", "frame"]:
        raise DataError(f"labels.csv: header must start with subject,frame,AU1,...")
    num_aus = len(header) - 2
    expected_au = [f"AU{j + 1}" for j in range(num_aus)]
    if header[2:] != expected_au:
        raise DataError(f"labels.csv: AU columns must be {expected_au}, got {header[2:]}")

    lm_header, lm_rows = _read_rows(root / "landmarks.csv")
    if len(lm_header) < 4 or (len(lm_header) - 2) % 2 != 0:
        raise DataError("landmarks.csv: header must be subject,frame,x1,y1,...")
    landmark_count = (len(lm_header) - 2) // 2
    landmarks: dict[tuple[str, str], np.ndarray] = {}
    for k, row in enumerate(lm_rows, start=2):
        if len(row) != len(lm_header):
            raise DataError(f"landmarks.csv row {k}: expected {len(lm_header)} fields")
        key = (row[0], row[1])
        try:
            pts = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"landmarks.csv row {k}: non-numeric coordinate") from None
        landmarks[key] = pts.reshape(landmark_count, 2)

    samples: list[Sample] = []
    image_size: int | None = None
    for k, row in enumerate(label_rows, start=2):
        if len(row) != len(header):
            raise DataError(f"labels.csv row {k}: expected {len(header)} fields")
        subject, frame = row[0], row[1]
        values = row[2:]
        if any(v not in ("0", "1") for v in values):
            raise DataError(f"labels.csv row {k}: labels must be 0/1, got {values}")
        key = (subject, frame)
        if key not in landmarks:
            raise DataError(f"landmarks.csv: missing row for subject={subject} frame={frame}")
        img_path = root / "images" / f"{subject}_{frame}.png"
        if not img_path.exists():
            raise DataError(f"missing image file: {img_path}")
        with Image.open(img_path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
            raise DataError(f"{img_path}: expected a square RGB image, got {arr.shape}")
        if image_size is None:
            image_size = arr.shape[0]
        elif arr.shape[0] != image_size:
            raise DataError(
                f"{img_path}: size {arr.shape[0]} differs from first image ({image_size})"
            )
        pts = landmarks[key]
        if (pts < 0).any() or (pts > image_size).any():
            raise DataError(
                f"landmarks for subject={subject} frame={frame} leave the image bounds"
            )
        samples.append(
            Sample(
                subject=subject,
                frame=frame,
                image=arr,
                landmarks=pts,
                labels=np.array([int(v) for v in values], dtype=np.int64),
            )
        )
    if not samples:
        raise DataError(f"{root}: dataset contains no samples")

    rules = None
    rules_path = root / "center_rules.txt"
    if rules_path.exists():
        rules = CenterRuleTable.from_file(rules_path)
        rules.validate_scheme(landmark_count)
        if rules.num_aus != num_aus:
            raise DataError(
                f"center_rules.txt covers {rules.num_aus} AUs, labels declare {num_aus}"
            )

    oracle = None
    oracle_path = root / "oracle_regions.csv"
    if oracle_path.exists():
        oracle = _load_oracle(oracle_path, num_aus)
        missing = [key for key in ((s.subject, s.frame) for s in samples) if key not in oracle]
        if missing:
            raise DataError(
                f"oracle_regions.csv: missing row for subject={missing[0][0]} "
                f"frame={missing[0][1]}"
            )

    return Dataset(
        root=root,
        samples=samples,
        num_aus=num_aus,
        landmark_count=landmark_count,
        image_size=int(image_size),
        rules=rules,
        oracle=oracle,
    )


def _load_oracle(path: Path, num_aus: int) -> dict[tuple[str, str], np.ndarray]:
    header, rows = _read_rows(path)
    expected = ["subject", "frame"] + [
        f"AU{j + 1}_{side}_{coord}"
        for j in range(num_aus)
        for side in SIDES
        for coord in ("x1", "y1", "x2", "y2")
    ]
    if header != expected:
        raise DataError(f"{path}: unexpected header (see docs/formats.md)")
    out: dict[tuple[str, str], np.ndarray] = {}
    for k, row in enumerate(rows, start=2):
        if len(row) != len(expected):
            raise DataError(f"{path} row {k}: expected {len(expected)} fields")
        try:
            vals = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path} row {k}: non-numeric box coordinate") from None
        out[(row[0], row[1])] = vals.reshape(num_aus, 2, 4)
    return out


# --------------------------------------------------------------------------
# Subject-independent folds
# --------------------------------------------------------------------------


def make_folds(subjects: list[str], k: int = 3, seed: int = 0) -> list[list[str]]:
    """Deterministic seeded partition of subjects into k near-equal groups."""
    unique = sorted(set(subjects))
    if len(unique) < k:
        raise DataError(f"need at least {k} subjects for {k} folds, got {len(unique)}")
    rng = np.random.default_rng(seed)
    order = [unique[i] for i in rng.permutation(len(unique))]
    return [list(part) for part in np.array_split(np.array(order, dtype=object), k)]


@dataclass
class FoldSplit:
    """Subject folds plus the per-fold train/test sample index lists."""

    folds: list[list[str]]
    train_indices: list[np.ndarray]
    test_indices: list[np.ndarray]

    @classmethod
    def build(cls, dataset: Dataset, k: int = 3, seed: int = 0) -> "FoldSplit":
        folds = make_folds(dataset.subjects, k=k, seed=seed)
        train_idx, test_idx = [], []
        for fold in folds:
            test_subjects = set(fold)
            train_subjects = set(dataset.subjects) - test_subjects
            train_idx.append(dataset.indices_for_subjects(train_subjects))
            test_idx.append(dataset.indices_for_subjects(test_subjects))
        return cls(folds=folds, train_indices=train_idx, test_indices=test_idx)

    @property
    def k(self) -> int:
        return len(self.folds)


# --------------------------------------------------------------------------
# Augmentation
# --------------------------------------------------------------------------


def _mirror_remap_68() -> np.ndarray:
    """Index remap pairing each 68-scheme landmark with its mirror twin."""
    remap = np.arange(68)
    pairs = (
        [(i, 16 - i) for i in range(8)]
        + [(17 + i, 26 - i) for i in range(5)]
        + [(31, 35), (32, 34)]
        + [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)]
        + [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)]
        + [(60, 64), (61, 63), (65, 67)]
    )
    for a, b in pairs:
        remap[a], remap[b] = b, a
    return remap


FLIP_REMAP_68 = _mirror_remap_68()


def flip_landmarks(landmarks: np.ndarray, image_size: int) -> np.ndarray:
    """Mirror landmarks horizontally, re-indexing so anatomical sides swap.

    After the remap, left-side rule anchors resolve to left-side points of
    the mirrored face, which is what swaps the left/right region roles.
    """
    if landmarks.shape[0] != FLIP_REMAP_68.shape[0]:
        raise ConfigError(
            f"horizontal flip needs the 68-point scheme, got {landmarks.shape[0]} points"
        )
    flipped = landmarks[FLIP_REMAP_68].copy()
    flipped[:, 0] = (image_size - 1) - flipped[:, 0]
    return flipped


def augment(
    sample: Sample,
    mode: str,
    rng: np.random.Generator | None = None,
    input_size: int = 192,
) -> tuple[np.ndarray, np.ndarray]:
    """Produce the network input and the matching shifted landmarks.

    Train mode flips horizontally with probability 0.5 (labels are
    side-agnostic, so they are untouched) and crops at a random offset;
    test mode center-crops only. Returns ``(image, landmarks)`` with the
    image as float32 (3, input_size, input_size) scaled to [0, 1].
    """
    if mode not in ("train", "test"):
        raise ConfigError(f"augment mode must be train or test, got {mode!r}")
    img = sample.image
    size = img.shape[0]
    margin = size - input_size
    if margin < 0:
        raise DataError(
            f"image size {size} is smaller than the network input {input_size}"
        )
    landmarks = sample.landmarks
    if mode == "train":
        if rng is None:
            raise ConfigError("train-mode augmentation needs a random generator")
        if rng.random() < 0.5:
            img = img[:, ::-1]
            landmarks = flip_landmarks(landmarks, size)
        off_x = int(rng.integers(0, margin + 1))
        off_y = int(rng.integers(0, margin + 1))
    else:
        off_x = off_y = margin // 2
    img = img[off_y : off_y + input_size, off_x : off_x + input_size]
    landmarks = landmarks - np.array([off_x, off_y], dtype=np.float64)
    out = np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32) / 255.0
    return out, landmarks
