"""Experiment files: a JSON document describing dataset, models, training
settings, seeds and the learning-rate/L2 grid, plus the orchestration that
turns one into CSV artifacts.

Outputs of a run, all under ``output_dir``:

* ``curve_<model>_lr<lr>_l2<l2>_seed<seed>.csv`` per run (``_diverged``
  suffix when training aborted), schema
  ``epoch,train_loss,train_acc,val_acc,seconds`` after a
  ``# config-hash=...`` header line;
* ``summary.csv`` with one row per model at its best grid point,
  schema ``model,init,arch,lr,l2,mean_acc,std_acc,epochs_to_theta_median``;
* optional per-run weight checkpoints;
* ``manifest.csv`` listing every written file with its config hash
  (its own row carries ``-``).

The ``seconds`` column is wall clock and therefore the only part of the
output that is not bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .data import (
    Dataset,
    SplitSpec,
    load_idx,
    load_pnm,
    make_patch_dataset,
    make_spectral_dataset,
    split,
    standardize,
)
from .errors import ConfigError
from .layers import InitKind
from .models import Arch, ModelConfig, fit_budget
from .serialization import format_float, save_checkpoint, stable_hash
from .training import RunResult, TrainConfig, run_matrix
from .transforms import OutputMode

_SPLIT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "train": {"type": "number"},
        "val": {"type": "number"},
        "test": {"type": "number"},
        "seed": {"type": "integer"},
    },
    "required": ["train", "val", "test"],
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "models", "train", "seeds", "grid", "output_dir"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["spectral", "idx", "patches", "shape"]},
                "n": {"type": "integer", "minimum": 1},
                "classes": {"type": "integer", "minimum": 1},
                "size": {"type": "integer", "minimum": 2},
                "noise_sigma": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "images": {"type": "string"},
                "labels": {"type": "string"},
                "image": {"type": "string"},
                "label_map": {"type": "string"},
                "patch": {"type": "integer", "minimum": 1},
                "input_shape": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "num_classes": {"type": "integer", "minimum": 1},
                "split": _SPLIT_SCHEMA,
                "standardize": {"type": "boolean"},
            },
        },
        "models": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["arch"],
                "properties": {
                    "arch": {"enum": [a.value for a in Arch]},
                    "init": {"enum": [i.value for i in InitKind]},
                    "label": {"type": "string"},
                    "stage_channels": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "budget": {"type": "integer", "minimum": 1},
                    "budget_tol": {"type": "number", "exclusiveMinimum": 0},
                    "leaky_slope": {"type": "number"},
                    "dft_output_mode": {"enum": ["concat", "amplitude"]},
                    "fit_budget": {"type": "boolean"},
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "required": ["epochs"],
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "momentum": {"type": "number"},
                "eval_every": {"type": "integer", "minimum": 1},
            },
        },
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lr"],
            "properties": {
                "lr": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "l2": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
        },
        "theta": {"type": "number"},
        "output_dir": {"type": "string"},
        "save_checkpoints": {"type": "boolean"},
    },
}

DEFAULT_GRID_LR = [0.1, 0.03, 0.01, 0.003]
DEFAULT_GRID_L2 = [0.0, 1e-4, 1e-3]


@dataclass
class ExperimentSpec:
    dataset: dict
    model_entries: list[dict]
    train: TrainConfig
    seeds: list[int]
    grid: list[tuple[float, float]]
    theta: float
    output_dir: str
    save_checkpoints: bool
    raw: dict

    @property
    def experiment_hash(self) -> str:
        return stable_hash(self.raw)


def load_experiment(path) -> ExperimentSpec:
    """Parse and schema-validate an experiment file.

    Raises :class:`jsonschema.ValidationError` (whose ``json_path`` names
    the offending key) or :class:`json.JSONDecodeError`.
    """
    raw = json.loads(Path(path).read_text())
    jsonschema.validate(raw, EXPERIMENT_SCHEMA)
    train_section = dict(raw["train"])
    train_cfg = TrainConfig(
        epochs=train_section["epochs"],
        batch_size=train_section.get("batch_size", 64),
        momentum=train_section.get("momentum", 0.9),
        eval_every=train_section.get("eval_every", 1),
    )
    grid_lr = raw["grid"]["lr"]
    grid_l2 = raw["grid"].get("l2", [0.0])
    grid = [(float(lr), float(l2)) for lr in grid_lr for l2 in grid_l2]
    return ExperimentSpec(
        dataset=raw["dataset"],
        model_entries=list(raw["models"]),
        train=train_cfg,
        seeds=list(raw["seeds"]),
        grid=grid,
        theta=float(raw.get("theta", 0.9)),
        output_dir=raw["output_dir"],
        save_checkpoints=bool(raw.get("save_checkpoints", False)),
        raw=raw,
    )


def dataset_shape_info(cfg: dict, base_dir: Path) -> tuple[tuple[int, int, int], int]:
    """Input shape and class count implied by a dataset section."""
    kind = cfg["kind"]
    if kind == "spectral":
        return (1, cfg["size"], cfg["size"]), cfg["classes"]
    if kind == "shape":
        return tuple(cfg["input_shape"]), cfg["num_classes"]
    if kind == "patches":
        image = load_pnm(base_dir / cfg["image"])
        label_map = _load_label_map(base_dir / cfg["label_map"])
        return (image.shape[0], cfg["patch"], cfg["patch"]), int(label_map.max()) + 1
    if kind == "idx":
        ds = load_idx(base_dir / cfg["images"], base_dir / cfg["labels"])
        return ds.sample_shape, ds.num_classes
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _load_label_map(path) -> np.ndarray:
    gray = load_pnm(path)
    if gray.shape[0] != 1:
        raise ConfigError("label map must be a single-channel PGM")
    return np.rint(gray[0] * 255.0).astype(np.int64)


def resolve_dataset(cfg: dict, base_dir: Path) -> tuple[Dataset, Dataset, Dataset]:
    """Materialize the dataset section and return standardized splits."""
    kind = cfg["kind"]
    if kind == "shape":
        raise ConfigError("a shape-only dataset cannot be trained on")
    if kind == "spectral":
        full = make_spectral_dataset(
            n=cfg["n"],
            classes=cfg["classes"],
            size=cfg["size"],
            noise_sigma=cfg.get("noise_sigma", 0.0),
            seed=cfg.get("seed", 0),
        )
    elif kind == "idx":
        full = load_idx(base_dir / cfg["images"], base_dir / cfg["labels"])
    elif kind == "patches":
        image = load_pnm(base_dir / cfg["image"])
        label_map = _load_label_map(base_dir / cfg["label_map"])
        full = make_patch_dataset(
            image, label_map, patch=cfg["patch"], n=cfg["n"], seed=cfg.get("seed", 0)
        )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    split_cfg = cfg.get("split", {"train": 0.8, "val": 0.1, "test": 0.1, "seed": 0})
    parts = split(
        full,
        SplitSpec(
            split_cfg["train"], split_cfg["val"], split_cfg["test"], split_cfg.get("seed", 0)
        ),
    )
    if cfg.get("standardize", True):
        parts = standardize(*parts)
    return parts


def build_model_configs(
    spec: ExperimentSpec, input_shape: tuple[int, int, int], num_classes: int
) -> tuple[list[ModelConfig], list[bool]]:
    """Expand the model entries into full configs plus per-model fit flags."""
    configs, fit_flags = [], []
    for entry in spec.model_entries:
        kwargs = dict(
            arch=Arch(entry["arch"]),
            init=InitKind(entry["init"]) if "init" in entry else None,
            input_shape=input_shape,
            num_classes=num_classes,
        )
        if "stage_channels" in entry:
            kwargs["stage_channels"] = tuple(entry["stage_channels"])
        if "budget" in entry:
            kwargs["budget"] = entry["budget"]
        if "budget_tol" in entry:
            kwargs["budget_tol"] = entry["budget_tol"]
        if "leaky_slope" in entry:
            kwargs["leaky_slope"] = entry["leaky_slope"]
        if "dft_output_mode" in entry:
            kwargs["dft_output_mode"] = OutputMode(entry["dft_output_mode"])
        if "label" in entry:
            kwargs["label"] = entry["label"]
        configs.append(ModelConfig(**kwargs))
        fit_flags.append(entry.get("fit_budget", True))
    return configs, fit_flags


def _slug(text: str) -> str:
    return text.lower().replace(" ", "-").replace("/", "-")


def run_filename(model_label: str, lr: float, l2: float, seed: int, diverged: bool) -> str:
    suffix = "_diverged" if diverged else ""
    return f"curve_{_slug(model_label)}_lr{format_float(lr)}_l2{format_float(l2)}_seed{seed}{suffix}.csv"


def write_run_csv(path, record) -> None:
    lines = [f"# config-hash={record.config_hash}"]
    lines.append("epoch,train_loss,train_acc,val_acc,seconds")
    for e in record.epochs:
        lines.append(
            ",".join(
                [
                    str(e.epoch),
                    format_float(e.train_loss),
                    format_float(e.train_acc),
                    format_float(e.val_acc),
                    format_float(e.seconds),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(path, summaries) -> None:
    lines = ["model,init,arch,lr,l2,mean_acc,std_acc,epochs_to_theta_median"]
    for s in summaries:
        lines.append(
            ",".join(
                [
                    s.model,
                    s.init,
                    s.arch,
                    format_float(s.lr),
                    format_float(s.l2),
                    format_float(s.mean_acc),
                    format_float(s.std_acc),
                    format_float(s.epochs_to_theta_median),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ExperimentOutcome:
    summaries: list
    results: list[RunResult]
    out_dir: Path
    written: list[str]

    @property
    def all_diverged(self) -> bool:
        return all(r.diverged for r in self.results)


def run_experiment(
    spec: ExperimentSpec, base_dir: Path, workers: int | None = None
) -> ExperimentOutcome:
    """Execute every configured run and write curves, summary and manifest."""
    base_dir = Path(base_dir)
    splits = resolve_dataset(spec.dataset, base_dir)
    input_shape, num_classes = splits[0].sample_shape, splits[0].num_classes
    configs, fit_flags = build_model_configs(spec, input_shape, num_classes)
    prepared = [
        fit_budget(cfg) if flag else cfg for cfg, flag in zip(configs, fit_flags)
    ]
    summaries, results = run_matrix(
        prepared,
        splits,
        spec.train,
        seeds=spec.seeds,
        grid=spec.grid,
        theta=spec.theta,
        workers=workers,
        fit=False,
        keep_state=spec.save_checkpoints,
    )

    out_dir = base_dir / spec.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows: list[tuple[str, str]] = []
    for res in results:
        cfg = prepared[res.spec.model_index]
        lr = res.spec.train_config.learning_rate
        l2 = res.spec.train_config.l2_lambda
        name = run_filename(cfg.display_name, lr, l2, res.spec.train_config.seed, res.diverged)
        write_run_csv(out_dir / name, res.record)
        manifest_rows.append((name, res.record.config_hash))
        if spec.save_checkpoints and res.final_state is not None:
            ckpt_name = name.replace("curve_", "ckpt_").replace(".csv", ".snnc")
            save_checkpoint(out_dir / ckpt_name, res.final_state)
            manifest_rows.append((ckpt_name, res.record.config_hash))

    write_summary_csv(out_dir / "summary.csv", summaries)
    manifest_rows.append(("summary.csv", spec.experiment_hash))
    manifest_rows.append(("manifest.csv", "-"))
    manifest_lines = ["path,config_hash"] + [f"{p},{h}" for p, h in manifest_rows]
    (out_dir / "manifest.csv").write_text("\n".join(manifest_lines) + "\n")
    written = [p for p, _ in manifest_rows]
    return ExperimentOutcome(summaries, results, out_dir, written)
