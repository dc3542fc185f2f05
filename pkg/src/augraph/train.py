"""Training, evaluation and the ablation runner.

A run trains the configured preset on each requested subject-independent
fold: fold-train labels feed the class weights and the relation graph, a
held-out slice of training subjects drives best-checkpoint selection by
validation mean F1, and the fold's test subjects produce the final report.
Optimization is plain SGD with momentum and a single step decay. Runs are
reproducible: with one thread and a fixed seed, two runs produce identical
records.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

import augraph
from augraph import config as kvconfig
from augraph import geometry, graph, network, objective
from augraph.data import Dataset, FoldSplit, augment, load_dataset
from augraph.errors import ConfigError, DataError, TrainingError
from augraph.geometry import CenterRuleTable, LandmarkSet
from augraph.synth import synthetic_rules


@dataclass
class TrainConfig:
    """Run parameters; model architecture fields live in ``model_overrides``."""

    data_dir: str
    out_dir: str
    preset: str = "full"
    epochs: int = 12
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_factor: float = 0.1
    decay_at: float = 2.0 / 3.0
    head_lr_scale: float = 1.0
    seed: int = 0
    fold_seed: int = 0
    num_folds: int = 3
    folds: tuple[int, ...] | None = None  # None = all
    val_fraction: float = 0.1
    threads: int = 1
    quiet: bool = False
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("need at least 1 epoch and a batch size of 2")
        if not 0.0 <= self.val_fraction < 0.5:
            raise ConfigError(f"val_fraction must lie in [0, 0.5), got {self.val_fraction}")

    def requested_folds(self) -> list[int]:
        folds = list(range(self.num_folds)) if self.folds is None else list(self.folds)
        bad = [f for f in folds if not 0 <= f < self.num_folds]
        if bad:
            raise ConfigError(f"fold indices out of range: {bad}")
        return folds

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        out["folds"] = list(self.folds) if self.folds is not None else None
        return out


_MODEL_KEY_PREFIX = "model."


def train_config_from_kv(raw: dict[str, str], **extra) -> TrainConfig:
    """Build a TrainConfig from flat key=value pairs (CLI overrides last)."""
    kwargs: dict[str, object] = {}
    overrides: dict[str, object] = {}
    coercers = {
        "data_dir": str, "out_dir": str, "preset": str,
        "epochs": kvconfig.as_int, "batch_size": kvconfig.as_int,
        "lr": kvconfig.as_float, "momentum": kvconfig.as_float,
        "weight_decay": kvconfig.as_float, "decay_factor": kvconfig.as_float,
        "decay_at": kvconfig.as_float, "head_lr_scale": kvconfig.as_float,
        "seed": kvconfig.as_int, "fold_seed": kvconfig.as_int,
        "num_folds": kvconfig.as_int, "val_fraction": kvconfig.as_float,
        "threads": kvconfig.as_int, "quiet": kvconfig.as_bool,
    }
    for key, value in raw.items():
        if key.startswith(_MODEL_KEY_PREFIX):
            overrides[key[len(_MODEL_KEY_PREFIX):]] = _coerce_model_value(
                key[len(_MODEL_KEY_PREFIX):], value
            )
        elif key == "folds":
            kwargs["folds"] = tuple(kvconfig.as_int_list(value, key))
        elif key in coercers:
            fn = coercers[key]
            kwargs[key] = fn(value) if fn is str else fn(value, key)
        else:
            raise ConfigError(f"unknown training config key {key!r}")
    kwargs["model_overrides"] = overrides
    kwargs.update(extra)
    return TrainConfig(**kwargs)


def _coerce_model_value(key: str, value: str):
    if key in ("roi_sizes",):
        return tuple(kvconfig.as_float_list(value, key))
    if key in ("backbone_channels",):
        return tuple(kvconfig.as_int_list(value, key))
    if key in ("scale_bound", "min_box_side", "p_pos"):
        return kvconfig.as_float(value, key)
    if key in ("graph_mode",):
        return value
    if key.startswith("use_") or key in ("symmetrize_intra",):
        return kvconfig.as_bool(value, key)
    return kvconfig.as_int(value, key)


@dataclass
class FoldRecord:
    fold: int
    test_subjects: list[str]
    epoch_losses: list[dict]
    val_f1: list[float]
    best_epoch: int
    test_report: dict
    checkpoint: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunRecord:
    """Everything one training run produced, serializable to JSON."""

    config: dict
    model_config: dict
    version: str
    seed: int
    folds: list[FoldRecord]
    mean_f1: float
    wallclock_sec: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "model_config": self.model_config,
            "version": self.version,
            "seed": self.seed,
            "folds": [f.to_dict() for f in self.folds],
            "mean_f1": self.mean_f1,
            "wallclock_sec": self.wallclock_sec,
        }

    def check_consistency(self) -> None:
        fold_means = [f.test_report["mean_f1"] for f in self.folds]
        if abs(self.mean_f1 - float(np.mean(fold_means))) > 1e-9:
            raise TrainingError("run record mean F1 does not match its folds")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def dataset_rules(dataset: Dataset) -> CenterRuleTable:
    """The dataset's rule table, or the packaged default matching its AUs."""
    if dataset.rules is not None:
        return dataset.rules
    if dataset.landmark_count == 68:
        default = geometry.default_center_rules()
        if default.num_aus == dataset.num_aus:
            return default
        if dataset.num_aus <= 6:
            return synthetic_rules(dataset.num_aus)
    raise DataError(
        "dataset carries no center_rules.txt and no packaged default matches "
        f"{dataset.num_aus} AUs on a {dataset.landmark_count}-point scheme"
    )


def batch_centers(
    landmarks: np.ndarray, rules: CenterRuleTable
) -> np.ndarray:
    """Per-side AU centers for a batch of landmark sets: (N, 2, C, 2)."""
    return np.stack(
        [au_centers_cached(lm, rules) for lm in landmarks], axis=0
    )


def au_centers_cached(lm: np.ndarray, rules: CenterRuleTable) -> np.ndarray:
    return geometry.au_centers(LandmarkSet(lm), rules)


def _prepare_batch(
    dataset: Dataset,
    indices: np.ndarray,
    rules: CenterRuleTable,
    mode: str,
    input_size: int,
    rng: np.random.Generator | None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    images, centers, labels = [], [], []
    for i in indices:
        sample = dataset.samples[int(i)]
        img, lm = augment(sample, mode, rng, input_size=input_size)
        images.append(img)
        centers.append(au_centers_cached(lm, rules))
        labels.append(sample.labels)
    x = torch.from_numpy(np.stack(images))
    c = torch.from_numpy(np.stack(centers).astype(np.float32))
    y = torch.from_numpy(np.stack(labels).astype(np.float32))
    return x, c, y


def evaluate_model(
    model: network.AuModel,
    dataset: Dataset,
    indices: np.ndarray,
    rules: CenterRuleTable,
    batch_size: int = 64,
) -> tuple[objective.EvalReport, np.ndarray]:
    """Test-mode forward over ``indices``; returns the report and fused
    probabilities (sample order follows ``indices``)."""
    if len(indices) == 0:
        raise DataError("evaluation needs at least one sample")
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            x, c, _ = _prepare_batch(
                dataset, chunk, rules, "test", model.config.input_size, None
            )
            preds = model(x, c)
            probs.append(torch.sigmoid(preds.fused).numpy())
    prob_mat = np.concatenate(probs, axis=0)
    labels = dataset.labels_matrix(indices)
    return objective.f1_frame(prob_mat, labels), prob_mat


def _make_optimizer(model: network.AuModel, cfg: TrainConfig) -> torch.optim.SGD:
    head_params = []
    other_params = []
    for name, p in model.named_parameters():
        (head_params if name.startswith("scale_head") else other_params).append(p)
    groups = [{"params": other_params, "lr": cfg.lr}]
    if head_params:
        groups.append({"params": head_params, "lr": cfg.lr * cfg.head_lr_scale})
    return torch.optim.SGD(
        groups, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )


def _split_validation(
    dataset: Dataset, train_subjects: list[str], cfg: TrainConfig, fold: int
) -> tuple[np.ndarray, np.ndarray]:
    """Carve a validation slice (by subject) out of the fold-train subjects."""
    subjects = sorted(train_subjects)
    n_val = max(1, round(cfg.val_fraction * len(subjects))) if cfg.val_fraction > 0 else 0
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, fold, 17)))
    order = rng.permutation(len(subjects))
    val_subjects = {subjects[i] for i in order[:n_val]}
    fit_subjects = set(subjects) - val_subjects
    return (
        dataset.indices_for_subjects(fit_subjects),
        dataset.indices_for_subjects(val_subjects),
    )


def train_fold(
    dataset: Dataset,
    split: FoldSplit,
    fold: int,
    cfg: TrainConfig,
    model_cfg: network.ModelConfig,
    out_dir: Path,
) -> FoldRecord:
    rules = dataset_rules(dataset)
    fit_idx, val_idx = _split_validation(
        dataset, sorted(set(dataset.subjects) - set(split.folds[fold])), cfg, fold
    )
    if len(fit_idx) < cfg.batch_size:
        raise DataError(
            f"fold {fold}: only {len(fit_idx)} training samples for batch size "
            f"{cfg.batch_size}"
        )

    train_labels = dataset.labels_matrix(fit_idx)
    weights = objective.class_weights(objective.occurrence_rates(train_labels))
    w = weights.tensor()

    model = network.build_model(model_cfg, seed=cfg.seed * 1000 + fold)
    if model_cfg.use_roi:
        stats = graph.cooccurrence(train_labels) if model_cfg.use_intra_graph else None
        rel = graph.assemble_graph(
            stats,
            num_aus=model_cfg.num_aus,
            levels=len(model_cfg.active_levels),
            p_pos=model_cfg.p_pos,
            use_intra=model_cfg.use_intra_graph,
            use_inter=model_cfg.use_inter_graph,
            symmetrize=model_cfg.symmetrize_intra,
            mode=model_cfg.graph_mode,
        )
        model.set_graph(rel.normalized)

    optimizer = _make_optimizer(model, cfg)
    decay_epoch = max(1, int(cfg.decay_at * cfg.epochs))
    epoch_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, fold, 29)))

    level_names = [f"level{lv + 1}" for lv in model_cfg.active_levels]
    epoch_losses: list[dict] = []
    val_scores: list[float] = []
    best_state: dict | None = None
    best_f1 = -1.0
    best_epoch = -1

    for epoch in range(cfg.epochs):
        if epoch == decay_epoch:
            for group in optimizer.param_groups:
                group["lr"] *= cfg.decay_factor
        model.train()
        order = epoch_rng.permutation(len(fit_idx))
        totals = {"total": 0.0, "global": 0.0, **{n: 0.0 for n in level_names}}
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = fit_idx[order[start : start + cfg.batch_size]]
            if len(chunk) < 2:
                continue  # batch statistics need at least two samples
            x, c, y = _prepare_batch(
                dataset, chunk, rules, "train", model_cfg.input_size, epoch_rng
            )
            preds = model(x, c if model_cfg.use_roi else None)
            loss_global = objective.weighted_bce(preds.global_logits, y, w)
            loss = loss_global
            totals["global"] += float(loss_global.detach())
            for name, logits in zip(level_names, preds.level_logits):
                branch = objective.weighted_bce(logits, y, w)
                totals[name] += float(branch.detach())
                loss = loss + branch
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"fold {fold} epoch {epoch}: loss became non-finite; "
                    "lower the learning rate"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            totals["total"] += float(loss.detach())
            batches += 1
        epoch_losses.append({k: v / max(batches, 1) for k, v in totals.items()})

        if len(val_idx) > 0:
            report, _ = evaluate_model(model, dataset, val_idx, rules)
            score = report.mean_f1
        else:
            score = -float(epoch_losses[-1]["total"])
        val_scores.append(score)
        if score > best_f1:
            best_f1 = score
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if not cfg.quiet:
            print(
                f"  fold {fold} epoch {epoch + 1}/{cfg.epochs}: "
                f"loss {epoch_losses[-1]['total']:.4f} val_f1 {score:.4f}"
            )

    if best_state is not None:
        model.load_state_dict(best_state)
    report, _ = evaluate_model(model, dataset, split.test_indices[fold], rules)
    ckpt_path = out_dir / f"fold{fold}.ckpt"
    network.save_checkpoint(model, ckpt_path)
    return FoldRecord(
        fold=fold,
        test_subjects=list(split.folds[fold]),
        epoch_losses=epoch_losses,
        val_f1=[float(v) for v in val_scores],
        best_epoch=best_epoch,
        test_report=report.to_dict(),
        checkpoint=str(ckpt_path),
    )


def train_run(cfg: TrainConfig, dataset: Dataset | None = None) -> RunRecord:
    """Train every requested fold and write the run record + checkpoints."""
    torch.set_num_threads(max(1, cfg.threads))
    start = time.time()
    if dataset is None:
        dataset = load_dataset(cfg.data_dir)
    model_cfg = network.ModelConfig.from_preset(
        cfg.preset, num_aus=dataset.num_aus, **cfg.model_overrides
    )
    split = FoldSplit.build(dataset, k=cfg.num_folds, seed=cfg.fold_seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    records = []
    for fold in cfg.requested_folds():
        if not cfg.quiet:
            print(f"fold {fold}: training preset {cfg.preset!r}")
        records.append(train_fold(dataset, split, fold, cfg, model_cfg, out_dir))
    run = RunRecord(
        config=cfg.to_dict(),
        model_config=model_cfg.to_dict(),
        version=augraph.__version__,
        seed=cfg.seed,
        folds=records,
        mean_f1=float(np.mean([r.test_report["mean_f1"] for r in records])),
        wallclock_sec=time.time() - start,
    )
    run.check_consistency()
    run.save(out_dir / "run_record.json")
    return run


# --------------------------------------------------------------------------
# Ablation ladder
# --------------------------------------------------------------------------


def ablate_run(
    base: TrainConfig,
    presets: list[str] | None = None,
    seeds: list[int] | None = None,
    dataset: Dataset | None = None,
) -> dict:
    """Train each preset with shared seeds; returns the comparison table."""
    presets = list(network.PRESETS) if presets is None else presets
    unknown = [p for p in presets if p not in network.PRESETS]
    if unknown:
        raise ConfigError(f"unknown presets: {unknown}")
    seeds = [base.seed] if not seeds else seeds
    if dataset is None:
        dataset = load_dataset(base.data_dir)
    table: dict[str, dict] = {}
    runs: dict[str, list[RunRecord]] = {}
    for preset in presets:
        per_seed = []
        for seed in seeds:
            cfg = copy.deepcopy(base)
            cfg.preset = preset
            cfg.seed = seed
            cfg.out_dir = str(Path(base.out_dir) / f"{preset}_seed{seed}")
            run = train_run(cfg, dataset=dataset)
            per_seed.append(run)
        runs[preset] = per_seed
        table[preset] = {
            "mean_f1": float(np.mean([r.mean_f1 for r in per_seed])),
            "per_seed": {str(r.seed): r.mean_f1 for r in per_seed},
        }
    result = {"presets": table, "seeds": seeds, "folds": base.requested_folds()}
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
    result["runs"] = runs
    return result


def format_ablation_table(result: dict) -> str:
    width = max(len(p) for p in result["presets"])
    lines = [f"{'preset'.ljust(width)}  mean F1"]
    for preset, row in result["presets"].items():
        lines.append(f"{preset.ljust(width)}  {row['mean_f1']:.4f}")
    return "\n".join(lines)
