"""Region overlays and box-accuracy reporting against oracle regions.

Overlays draw the landmark-derived initial boxes in blue and the refined
boxes in red, mapped back from feature-map units to image pixels, one PNG
per sample covering every active level. When the dataset ships oracle
regions, a sidecar JSON reports the mean intersection-over-union of both
box families against them, per (AU, level), which is how adaptive-box
convergence is scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from augraph import geometry, network
from augraph.data import Dataset, augment
from augraph.errors import DataError
from augraph.geometry import CenterRuleTable
from augraph.train import au_centers_cached

INITIAL_COLOR = (64, 96, 255)
REFINED_COLOR = (255, 64, 64)


@dataclass
class IouStats:
    """Mean IoU against oracle boxes, per (au, level), for both families."""

    initial: np.ndarray  # (C, L)
    refined: np.ndarray  # (C, L)
    levels: list[int]

    def mean_gain(self, pairs: list[tuple[int, int]]) -> float:
        """Average refined-minus-initial IoU over (au, level) pairs."""
        slots = {lv: i for i, lv in enumerate(self.levels)}
        gains = [
            self.refined[au, slots[lv]] - self.initial[au, slots[lv]]
            for au, lv in pairs
            if lv in slots
        ]
        if not gains:
            raise DataError("no requested (au, level) pair is active in this model")
        return float(np.mean(gains))

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "initial": self.initial.tolist(),
            "refined": self.refined.tolist(),
        }


def _boxes_to_image(trace: network.BoxTrace, input_size: int) -> tuple[np.ndarray, np.ndarray]:
    scale = input_size / trace.featmap_size
    return trace.initial * scale, trace.refined * scale


def collect_boxes(
    model: network.AuModel,
    dataset: Dataset,
    indices: np.ndarray,
    rules: CenterRuleTable,
    batch_size: int = 64,
) -> tuple[list[list[network.BoxTrace]], np.ndarray]:
    """Forward passes capturing box traces; returns per-batch traces plus
    the test-mode crop offset used (for oracle alignment)."""
    model.eval()
    offset = (dataset.image_size - model.config.input_size) // 2
    batches = []
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            images, centers = [], []
            for i in chunk:
                sample = dataset.samples[int(i)]
                img, lm = augment(sample, "test", None, model.config.input_size)
                images.append(img)
                centers.append(au_centers_cached(lm, rules))
            preds = model(
                torch.from_numpy(np.stack(images)),
                torch.from_numpy(np.stack(centers).astype(np.float32)),
                return_boxes=True,
            )
            batches.append(preds.boxes)
    return batches, np.array([offset, offset, offset, offset], dtype=np.float64)


def iou_stats(
    model: network.AuModel,
    dataset: Dataset,
    indices: np.ndarray,
    rules: CenterRuleTable,
) -> IouStats:
    """Mean IoU of initial and refined boxes against the oracle regions."""
    if dataset.oracle is None:
        raise DataError("dataset has no oracle_regions.csv")
    if not model.config.use_roi:
        raise DataError("the model has no region branches to score")
    cfg = model.config
    c = cfg.num_aus
    levels = list(cfg.active_levels)
    batches, offset = collect_boxes(model, dataset, indices, rules)
    sums_init = np.zeros((c, len(levels)))
    sums_ref = np.zeros((c, len(levels)))
    count = 0
    pos = 0
    for traces in batches:
        n = traces[0].initial.shape[0]
        oracle = np.stack(
            [
                dataset.oracle[
                    (dataset.samples[int(i)].subject, dataset.samples[int(i)].frame)
                ]
                for i in indices[pos : pos + n]
            ]
        )  # (n, C, 2, 4) in original image pixels
        oracle = oracle - offset  # into network-input coordinates
        pos += n
        count += n
        for slot, trace in enumerate(traces):
            init_img, ref_img = _boxes_to_image(trace, cfg.input_size)
            init_img = init_img.reshape(n, 2, c, 4)
            ref_img = ref_img.reshape(n, 2, c, 4)
            for side in range(2):
                sums_init[:, slot] += geometry.box_iou(
                    init_img[:, side], oracle[:, :, side]
                ).sum(axis=0)
                sums_ref[:, slot] += geometry.box_iou(
                    ref_img[:, side], oracle[:, :, side]
                ).sum(axis=0)
    denom = max(count * 2, 1)
    return IouStats(initial=sums_init / denom, refined=sums_ref / denom, levels=levels)


def write_overlays(
    model: network.AuModel,
    dataset: Dataset,
    indices: np.ndarray,
    rules: CenterRuleTable,
    out_dir: str | Path,
) -> list[Path]:
    """Render one overlay PNG per sample; returns the written paths."""
    if not model.config.use_roi:
        raise DataError("the model has no region branches to draw")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    written = []
    batches, _ = collect_boxes(model, dataset, indices, rules, batch_size=16)
    pos = 0
    for traces in batches:
        n = traces[0].initial.shape[0]
        for row in range(n):
            sample = dataset.samples[int(indices[pos + row])]
            img, _ = augment(sample, "test", None, cfg.input_size)
            canvas = Image.fromarray(
                (img.transpose(1, 2, 0) * 255).astype(np.uint8)
            )
            draw = ImageDraw.Draw(canvas)
            for trace in traces:
                init_img, ref_img = _boxes_to_image(trace, cfg.input_size)
                for box in init_img[row]:
                    draw.rectangle(box.tolist(), outline=INITIAL_COLOR)
                for box in ref_img[row]:
                    draw.rectangle(box.tolist(), outline=REFINED_COLOR)
            path = out / f"{sample.subject}_{sample.frame}_overlay.png"
            canvas.save(path)
            written.append(path)
        pos += n
    return written


def visualize(
    model: network.AuModel,
    dataset: Dataset,
    indices: np.ndarray,
    out_dir: str | Path,
    rules: CenterRuleTable,
) -> dict:
    """Overlays plus, when oracle regions exist, the IoU sidecar JSON."""
    out = Path(out_dir)
    paths = write_overlays(model, dataset, indices, rules, out)
    result: dict = {"overlays": [str(p) for p in paths]}
    if dataset.oracle is not None:
        stats = iou_stats(model, dataset, indices, rules)
        result["iou"] = stats.to_dict()
        (out / "iou_report.json").write_text(
            json.dumps(result["iou"], indent=2), encoding="utf-8"
        )
    return result
