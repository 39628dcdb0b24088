"""Model construction: the two baselines plus Single/Multi transform
configurations under RND/DCT/DFT initialization, fitted to a shared
trainable-parameter budget.

Every architecture is three conv stages followed by global average pooling
and a dense classifier. Transform stages insert a matrix transform between
the convolution and its Leaky ReLU. Multi configurations place a transform
in every stage and initialize the middle one as the inverse transform
(an independent random draw for RND, which has no inverse notion).

``plan_model`` computes the full layer/shape/parameter chain without
allocating any weights; ``fit_budget`` searches channel counts against that
plan; ``build_model`` materializes the plan with seeded initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .autodiff import Layer, Param
from .errors import BudgetError, ConfigError
from .layers import (
    Conv2d,
    ConvSpec,
    Dense,
    DenseSpec,
    Flatten,
    GlobalAvgPool,
    InitKind,
    LeakyRelu,
    MatrixTransform,
    TransformSpec,
    count_params,
)
from .transforms import OutputMode, TransformKind


class Arch(Enum):
    BASELINE_CONV = "BaselineConv"
    BASELINE_DEEP = "BaselineDeep"
    SINGLE = "Single"
    MULTI = "Multi"


@dataclass(frozen=True)
class StageKernel:
    """Kernel geometry of one conv stage (channels live in stage_channels)."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0


def default_stage_kernels(height: int, width: int) -> tuple[StageKernel, ...]:
    """Three stride-2 stages whose stacked receptive field covers the input."""
    if min(height, width) >= 24:
        k = StageKernel(5, 5, stride=2, padding=2)
    else:
        k = StageKernel(3, 3, stride=2, padding=1)
    return (k, k, k)


@dataclass(frozen=True)
class ModelConfig:
    arch: Arch
    init: InitKind | None = None
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    stage_channels: tuple[int, int, int] = (24, 32, 48)
    stage_kernels: tuple[StageKernel, ...] | None = None
    deep_extra_channels: int | None = None
    budget: int = 135000
    budget_tol: float = 0.035
    leaky_slope: float = 0.01
    dft_output_mode: OutputMode = OutputMode.CONCAT
    conv_bias: bool = False
    dense_bias: bool = False
    label: str | None = None

    def __post_init__(self):
        if self.arch in (Arch.SINGLE, Arch.MULTI) and self.init is None:
            raise ConfigError(f"{self.arch.value} models need an init kind")
        if len(self.stage_channels) != 3:
            raise ConfigError("stage_channels must have exactly 3 entries")
        if self.stage_kernels is not None and len(self.stage_kernels) != 3:
            raise ConfigError("stage_kernels must have exactly 3 entries")

    @property
    def display_name(self) -> str:
        if self.label:
            return self.label
        if self.arch in (Arch.BASELINE_CONV, Arch.BASELINE_DEEP):
            return self.arch.value
        return f"{self.init.value} {self.arch.value}"

    def kernels(self) -> tuple[StageKernel, ...]:
        if self.stage_kernels is not None:
            return self.stage_kernels
        return default_stage_kernels(self.input_shape[1], self.input_shape[2])


@dataclass(frozen=True)
class LayerPlan:
    name: str
    spec: object | None  # ConvSpec | TransformSpec | DenseSpec | None
    out_shape: tuple[int, ...]
    params: int
    paired_input: bool = False


@dataclass(frozen=True)
class ModelDescription:
    arch: Arch
    init: InitKind | None
    layers: tuple[LayerPlan, ...]
    total_params: int

    def to_text(self) -> str:
        rows = [("layer", "output shape", "params")]
        rows += [
            (p.name, "x".join(str(d) for d in p.out_shape), str(p.params))
            for p in self.layers
        ]
        rows.append(("total", "", str(self.total_params)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [
            "  ".join(col.ljust(widths[i]) for i, col in enumerate(row)).rstrip()
            for row in rows
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "init": self.init.value if self.init else None,
            "total_params": self.total_params,
            "layers": [
                {
                    "name": p.name,
                    "out_shape": list(p.out_shape),
                    "params": p.params,
                }
                for p in self.layers
            ],
        }


def _transform_kind(init: InitKind, inverse: bool) -> TransformKind:
    if init is InitKind.DCT:
        return TransformKind.DCT3_INVERSE if inverse else TransformKind.DCT2
    if init is InitKind.DFT:
        return TransformKind.DFT_INVERSE if inverse else TransformKind.DFT_FORWARD
    return TransformKind.RANDOM_NORMALIZED


def plan_model(config: ModelConfig) -> ModelDescription:
    """Resolve the full layer chain with shapes and parameter counts."""
    c, h, w = config.input_shape
    kernels = config.kernels()
    plans: list[LayerPlan] = []

    def add(name, spec, out_shape, params, paired=False):
        plans.append(LayerPlan(name, spec, tuple(out_shape), params, paired))

    def conv_stage(idx, in_shape, out_channels):
        cc, hh, ww = in_shape
        k = kernels[min(idx - 1, 2)]
        spec = ConvSpec(
            cc, out_channels, k.kernel_h, k.kernel_w, k.stride, k.padding, config.conv_bias
        )
        try:
            oh, ow = spec.out_size(hh, ww)
        except ValueError as exc:
            raise ConfigError(f"conv{idx}: {exc}") from exc
        add(f"conv{idx}", spec, (out_channels, oh, ow), count_params(spec))
        return out_channels, oh, ow

    def transform_stage(idx, in_shape, inverse):
        cc, hh, ww = in_shape
        kind = _transform_kind(config.init, inverse)
        spec = TransformSpec(kind, hh, ww, config.dft_output_mode)
        paired = False
        out_c = cc
        if kind is TransformKind.DFT_FORWARD and config.dft_output_mode is OutputMode.CONCAT:
            out_c = 2 * cc
        elif kind is TransformKind.DFT_INVERSE and config.dft_output_mode is OutputMode.CONCAT:
            if cc % 2:
                raise ConfigError(
                    f"transform{idx}: inverse transform needs an even channel count, got {cc}"
                )
            paired = True
            out_c = cc // 2
        add(f"transform{idx}", spec, (out_c, hh, ww), count_params(spec), paired)
        return out_c, hh, ww

    def relu_stage(idx, shape):
        add(f"relu{idx}", None, shape, 0)
        return shape

    shape = (c, h, w)
    with_transform = {
        Arch.BASELINE_CONV: (False, False, False),
        Arch.BASELINE_DEEP: (False, False, False),
        Arch.SINGLE: (True, False, False),
        Arch.MULTI: (True, True, True),
    }[config.arch]

    for stage in (1, 2, 3):
        shape = conv_stage(stage, shape, config.stage_channels[stage - 1])
        if with_transform[stage - 1]:
            shape = transform_stage(stage, shape, inverse=(stage == 2))
        shape = relu_stage(stage, shape)
        if stage == 1 and config.arch is Arch.BASELINE_DEEP:
            extra = config.deep_extra_channels or config.stage_channels[0]
            cc, hh, ww = shape
            spec = ConvSpec(cc, extra, 3, 3, 1, 1, config.conv_bias)
            oh, ow = spec.out_size(hh, ww)
            add("conv1b", spec, (extra, oh, ow), count_params(spec))
            shape = relu_stage("1b", (extra, oh, ow))

    add("gap", None, (shape[0], 1, 1), 0)
    add("flatten", None, (shape[0],), 0)
    dense = DenseSpec(shape[0], config.num_classes, config.dense_bias)
    add("classifier", dense, (config.num_classes,), count_params(dense))

    return ModelDescription(
        config.arch, config.init, tuple(plans), sum(p.params for p in plans)
    )


class Model:
    """Fixed sequential stack with manual forward/backward passes."""

    def __init__(self, layers: list[Layer], description: ModelDescription, config: ModelConfig):
        self.layers = layers
        self.description = description
        self.config = config

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def named_params(self) -> list[tuple[str, Param]]:
        out = []
        for i, layer in enumerate(self.layers):
            for j, p in enumerate(layer.params()):
                out.append((f"{i:02d}.{self.description.layers[i].name}.p{j}", p))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise ValueError(f"state dict keys do not match model: {sorted(missing)}")
        for name, value in state.items():
            if own[name].value.shape != value.shape:
                raise ValueError(f"shape mismatch for {name}")
            own[name].value[:] = value


def build_model(config: ModelConfig, seed: int) -> tuple[Model, ModelDescription]:
    """Materialize the planned layers with seed-deterministic initialization."""
    description = plan_model(config)
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    for plan in description.layers:
        if isinstance(plan.spec, ConvSpec):
            layer = Conv2d(plan.spec, rng)
        elif isinstance(plan.spec, TransformSpec):
            layer = MatrixTransform(
                plan.spec.kind,
                plan.spec.height,
                plan.spec.width,
                output_mode=plan.spec.output_mode,
                rng=rng,
                paired_input=plan.paired_input,
            )
        elif isinstance(plan.spec, DenseSpec):
            layer = Dense(plan.spec, rng)
        elif plan.name.startswith("relu"):
            layer = LeakyRelu(config.leaky_slope)
        elif plan.name == "gap":
            layer = GlobalAvgPool()
        elif plan.name == "flatten":
            layer = Flatten()
        else:
            raise ConfigError(f"cannot materialize layer {plan.name}")
        if layer.param_count() != plan.params:
            raise ConfigError(
                f"{plan.name}: realized {layer.param_count()} params, planned {plan.params}"
            )
        layers.append(layer)
    return Model(layers, description, config), description


def _channel_coordinates(config: ModelConfig) -> list[str]:
    coords = ["stage1", "stage2", "stage3"]
    if config.arch is Arch.BASELINE_DEEP:
        coords.append("extra")
    return coords


def _with_channels(config: ModelConfig, values: dict[str, int]) -> ModelConfig:
    channels = (values["stage1"], values["stage2"], values["stage3"])
    extra = values.get("extra", config.deep_extra_channels)
    return replace(config, stage_channels=channels, deep_extra_channels=extra)


def _count_or_none(config: ModelConfig) -> int | None:
    try:
        return plan_model(config).total_params
    except ConfigError:
        return None


def fit_budget(config: ModelConfig, max_channels: int = 768) -> ModelConfig:
    """Adjust channel counts until the total parameter count meets the budget.

    Deterministic coordinate descent: stages are revisited largest-first and
    each takes the single value that brings the total closest to the budget;
    among equally good values the one keeping stages most balanced wins.
    Raises :class:`BudgetError` with the nearest achievable totals if no
    assignment lands within tolerance.
    """
    if config.budget <= 0:
        raise BudgetError("budget must be positive")
    values = {
        "stage1": config.stage_channels[0],
        "stage2": config.stage_channels[1],
        "stage3": config.stage_channels[2],
    }
    if config.arch is Arch.BASELINE_DEEP:
        values["extra"] = config.deep_extra_channels or config.stage_channels[0]
    coords = _channel_coordinates(config)

    def error(vals) -> int | None:
        total = _count_or_none(_with_channels(config, vals))
        return None if total is None else abs(total - config.budget)

    current_err = error(values)
    if current_err is None:
        # repair an infeasible start (e.g. odd middle stage for DFT Multi)
        values["stage2"] += 1
        current_err = error(values)
        if current_err is None:
            raise BudgetError("starting configuration is structurally infeasible")

    # scale all stages together first so the fine search starts balanced
    base = dict(values)
    best_err, best_values = current_err, dict(values)
    seen: set[tuple] = set()
    for sixteenth in range(1, 16 * 64 + 1):
        factor = sixteenth / 16.0
        cand = {k: min(max_channels, max(1, round(v * factor))) for k, v in base.items()}
        key = tuple(sorted(cand.items()))
        if key in seen:
            continue
        seen.add(key)
        err = error(cand)
        if err is None:
            cand = dict(cand, stage2=cand["stage2"] + 1)
            err = error(cand)
            if err is None:
                continue
        if err < best_err:
            best_err, best_values = err, cand
    current_err, values = best_err, dict(best_values)

    for _ in range(64):
        improved = False
        for coord in sorted(coords, key=lambda c: (-values[c], c)):
            best_val, best_err = values[coord], current_err
            others = [v for c2, v in values.items() if c2 != coord]
            mean_others = sum(others) / len(others)
            best_balance = abs(values[coord] - mean_others)
            for cand in range(1, max_channels + 1):
                if cand == values[coord]:
                    continue
                trial = dict(values, **{coord: cand})
                err = error(trial)
                if err is None:
                    continue
                balance = abs(cand - mean_others)
                if err < best_err or (err == best_err and balance < best_balance):
                    best_val, best_err, best_balance = cand, err, balance
            if best_err < current_err:
                values[coord] = best_val
                current_err = best_err
                improved = True
        if not improved:
            break

    fitted = _with_channels(config, values)
    total = plan_model(fitted).total_params
    tol = config.budget * config.budget_tol
    if abs(total - config.budget) > tol:
        raise BudgetError(
            f"no channel assignment within {config.budget_tol:.1%} of "
            f"{config.budget}; nearest achievable total is {total}",
            nearest_counts=[total],
        )
    return fitted


def default_model_suite(
    input_shape: tuple[int, int, int] = (3, 32, 32),
    num_classes: int = 10,
    budget: int = 135000,
) -> list[ModelConfig]:
    """The eight standard configurations sharing one parameter budget."""
    configs = [
        ModelConfig(Arch.BASELINE_CONV, None, input_shape, num_classes, budget=budget),
        ModelConfig(Arch.BASELINE_DEEP, None, input_shape, num_classes, budget=budget),
    ]
    for arch in (Arch.SINGLE, Arch.MULTI):
        for init in (InitKind.RND, InitKind.DCT, InitKind.DFT):
            configs.append(
                ModelConfig(arch, init, input_shape, num_classes, budget=budget)
            )
    return configs
