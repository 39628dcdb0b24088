"""Loss, SGD with momentum, seeded training loop and the multi-seed grid
runner that produces per-epoch convergence records.

Determinism contract: given identical configs and seeds, every quantity
except wall-clock timings is bit-identical across runs on one platform.
Weight initialization derives from the run seed via ``build_model``; the
per-epoch shuffle uses a counter-based generator keyed by (seed, epoch) so
batching is independent of any other random state.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import DivergedRunError
from .models import Model, ModelConfig, build_model, fit_budget
from .serialization import stable_hash


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2_lambda: float = 0.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float


@dataclass
class RunRecord:
    seed: int
    config_hash: str
    epochs: list[EpochStats]

    @property
    def final_val_acc(self) -> float:
        return self.epochs[-1].val_acc if self.epochs else float("nan")

    def epochs_to_threshold(self, theta: float) -> float:
        """First 1-based epoch whose validation accuracy reaches theta."""
        for stats in self.epochs:
            if stats.val_acc >= theta:
                return float(stats.epoch)
        return float("inf")


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability of the labelled class.

    Returns the loss and its gradient (softmax - onehot) / batch. Logits are
    shifted by their row maximum before exponentiation.
    """
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels must lie in [0, {classes}), got {labels}")
    # non-finite results are legal here; the training loop's sentinel turns
    # them into a diverged-run error
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        picked = probs[np.arange(batch), labels]
        loss = float(-np.log(picked).mean())
    grad = probs
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return loss, grad


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())


class SgdMomentum:
    """SGD with classical momentum and additive L2 weight decay.

    Per step: g = grad + l2 * value; v = momentum * v + g; value -= lr * v.
    Frozen parameters are skipped entirely; all gradients are zeroed after
    the step.
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, l2_lambda: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.l2_lambda = l2_lambda
        self.velocities = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            if not p.frozen:
                g = p.grad
                if self.l2_lambda:
                    g = g + self.l2_lambda * p.value
                v *= self.momentum
                v += g
                p.value -= self.lr * v
            p.zero_grad()


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=[seed, epoch]))
    return gen.permutation(n)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        correct += int((model.forward(x).argmax(axis=1) == y).sum())
    return correct / len(dataset)


def train(
    model: Model, dataset_splits: tuple[Dataset, ...], config: TrainConfig
) -> RunRecord:
    """Run the seeded loop, returning per-epoch loss/accuracy records.

    ``dataset_splits`` is (train, validation[, ...]). Raises
    :class:`DivergedRunError` (carrying the epoch and the partial record)
    as soon as a batch loss stops being finite.
    """
    train_set, val_set = dataset_splits[0], dataset_splits[1]
    if not len(train_set) or not len(val_set):
        raise ValueError("train and validation splits must be nonempty")
    chash = stable_hash({"model": model.config, "train": config})
    record = RunRecord(config.seed, chash, [])
    optimizer = SgdMomentum(
        model.params(), config.learning_rate, config.momentum, config.l2_lambda
    )
    n = len(train_set)
    last_val = float("nan")
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = _epoch_order(config.seed, epoch, n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            logits = model.forward(x)
            loss, grad = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                err = DivergedRunError(epoch)
                err.record = record
                raise err
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            model.backward(grad)
            optimizer.step()
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            last_val = evaluate(model, val_set)
        record.epochs.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / n,
                train_acc=correct / n,
                val_acc=last_val,
                seconds=time.perf_counter() - t0,
            )
        )
    return record


@dataclass(frozen=True)
class RunSpec:
    model_index: int
    grid_index: int
    config: ModelConfig
    train_config: TrainConfig
    keep_state: bool = False

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.model_index, self.grid_index, self.train_config.seed)


@dataclass
class RunResult:
    spec: RunSpec
    record: RunRecord
    diverged_epoch: int | None = None
    final_state: dict | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_epoch is not None


@dataclass
class ModelSummary:
    model: str
    init: str
    arch: str
    lr: float
    l2: float
    mean_acc: float
    std_acc: float
    epochs_to_theta_median: float
    diverged_runs: int = 0


def _execute_run(spec: RunSpec) -> RunResult:
    model, _ = build_model(spec.config, seed=spec.train_config.seed)
    splits = _ACTIVE_SPLITS  # installed in this process by run_matrix
    try:
        record = train(model, splits, spec.train_config)
        state = model.state_dict() if spec.keep_state else None
        return RunResult(spec, record, final_state=state)
    except DivergedRunError as err:
        return RunResult(spec, err.record, diverged_epoch=err.epoch)


_ACTIVE_SPLITS: tuple[Dataset, ...] | None = None


def _install_splits(splits) -> None:
    global _ACTIVE_SPLITS
    _ACTIVE_SPLITS = splits


def run_matrix(
    model_configs: list[ModelConfig],
    splits: tuple[Dataset, ...],
    train_config: TrainConfig,
    seeds: list[int],
    grid: list[tuple[float, float]],
    theta: float = 0.9,
    workers: int | None = None,
    fit: bool = True,
    keep_state: bool = False,
) -> tuple[list[ModelSummary], list[RunResult]]:
    """Train every (model, grid point, seed) combination and summarize.

    For each model the grid point with the best mean final validation
    accuracy (ties: earliest grid entry) is selected; the summary reports
    mean/std of final accuracy and the median epochs-to-threshold over that
    point's seeds. Diverged runs stay in the result list, flagged, and are
    excluded from the statistics.
    """
    if not model_configs or not seeds or not grid:
        raise ValueError("model_configs, seeds and grid must be nonempty")
    fitted = [fit_budget(cfg) if fit else cfg for cfg in model_configs]
    specs = [
        RunSpec(
            mi,
            gi,
            cfg,
            replace(train_config, learning_rate=lr, l2_lambda=l2, seed=seed),
            keep_state=keep_state,
        )
        for mi, cfg in enumerate(fitted)
        for gi, (lr, l2) in enumerate(grid)
        for seed in seeds
    ]
    if workers is None:
        workers = _default_workers()
    _install_splits(splits)
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_install_splits, initargs=(splits,)
        ) as pool:
            results = list(pool.map(_execute_run, specs, chunksize=1))
    else:
        results = [_execute_run(spec) for spec in specs]
    results.sort(key=lambda r: r.spec.key)

    summaries = []
    for mi, cfg in enumerate(fitted):
        by_grid: dict[int, list[RunResult]] = {}
        for res in results:
            if res.spec.model_index == mi:
                by_grid.setdefault(res.spec.grid_index, []).append(res)
        # best mean accuracy; ties prefer points with fewer diverged seeds,
        # then the earlier grid entry
        best_gi, best_key = None, None
        for gi in sorted(by_grid):
            finals = [r.record.final_val_acc for r in by_grid[gi] if not r.diverged]
            if not finals:
                continue
            key = (float(np.mean(finals)), len(finals), -gi)
            if best_key is None or key > best_key:
                best_gi, best_key = gi, key
        if best_gi is None:
            summaries.append(
                ModelSummary(
                    cfg.display_name,
                    cfg.init.value if cfg.init else "-",
                    cfg.arch.value,
                    float("nan"),
                    float("nan"),
                    float("nan"),
                    float("nan"),
                    float("inf"),
                    diverged_runs=len([r for r in results if r.spec.model_index == mi]),
                )
            )
            continue
        chosen = [r for r in by_grid[best_gi] if not r.diverged]
        finals = [r.record.final_val_acc for r in chosen]
        reach = [r.record.epochs_to_threshold(theta) for r in chosen]
        lr, l2 = grid[best_gi]
        summaries.append(
            ModelSummary(
                model=cfg.display_name,
                init=cfg.init.value if cfg.init else "-",
                arch=cfg.arch.value,
                lr=lr,
                l2=l2,
                mean_acc=float(np.mean(finals)),
                std_acc=float(np.std(finals)),
                epochs_to_theta_median=float(np.median(reach)),
                diverged_runs=sum(
                    1 for r in results if r.spec.model_index == mi and r.diverged
                ),
            )
        )
    return summaries, results


def _default_workers() -> int:
    env = os.environ.get("SPECTRAL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
