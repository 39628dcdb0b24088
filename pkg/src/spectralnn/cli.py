"""Command-line interface.

Subcommands: ``init-matrix`` (write transform matrices as CSV),
``params`` (per-model parameter audit against the budget), ``gradcheck``
(finite-difference check of one layer kind), ``train`` (run an experiment
file) and ``export-weights`` (dump a transform layer's first weight matrix
from a checkpoint).

Exit codes: 0 success, 2 usage or schema error, 3 budget violation,
4 gradient-check failure, 5 every training run diverged. ``SPECTRAL_THREADS``
caps run parallelism (default: logical CPU count).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .autodiff import finite_difference_check
from .errors import BudgetError, ConfigError, ParseError, SplitError
from .experiment import (
    build_model_configs,
    dataset_shape_info,
    load_experiment,
    run_experiment,
)
from .layers import Conv2d, ConvSpec, Dense, DenseSpec, GlobalAvgPool, LeakyRelu, MatrixTransform
from .models import fit_budget, plan_model
from .serialization import load_checkpoint, save_matrix_csv, save_pgm
from .transforms import TransformKind, build_dct2, build_dct3_inverse, build_dft, build_idft

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_GRADCHECK = 4
EXIT_ALL_DIVERGED = 5

GRADCHECK_TOLERANCE = 1e-5


def normalized_difference(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Entrywise (after - before) / std(before), std over all entries."""
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise ValueError("matrices must share a shape")
    sigma = float(before.std())
    if sigma == 0.0:
        raise ValueError("before-matrix is constant; difference is undefined")
    return (after - before) / sigma


def _cmd_init_matrix(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = [(args.k, args.n)]
    if args.l is not None and args.m is not None:
        pairs.append((args.l, args.m))
    elif (args.l is None) != (args.m is None):
        print("init-matrix: L and M must be given together", file=sys.stderr)
        return EXIT_USAGE
    written = []
    for rows, cols in pairs:
        base = f"{args.kind}_{rows}x{cols}"
        try:
            if args.kind == "dct2":
                save_matrix_csv(out_dir / f"{base}.csv", build_dct2(rows, cols))
                written.append(f"{base}.csv")
            elif args.kind == "dct3-inverse":
                save_matrix_csv(out_dir / f"{base}.csv", build_dct3_inverse(rows, cols))
                written.append(f"{base}.csv")
            elif args.kind in ("dft", "idft"):
                pair = build_dft(rows, cols) if args.kind == "dft" else build_idft(rows, cols)
                save_matrix_csv(out_dir / f"{base}_re.csv", pair.re)
                save_matrix_csv(out_dir / f"{base}_im.csv", pair.im)
                written += [f"{base}_re.csv", f"{base}_im.csv"]
            else:
                from .layers import init_random_normalized

                save_matrix_csv(
                    out_dir / f"{base}.csv",
                    init_random_normalized(rows, cols, seed=args.seed),
                )
                written.append(f"{base}.csv")
        except ValueError as exc:
            print(f"init-matrix: {exc}", file=sys.stderr)
            return EXIT_USAGE
    for name in written:
        print(out_dir / name)
    return EXIT_OK


def _cmd_params(args) -> int:
    try:
        spec = load_experiment(args.experiment)
        base_dir = Path(args.experiment).parent
        input_shape, num_classes = dataset_shape_info(spec.dataset, base_dir)
        configs, fit_flags = build_model_configs(spec, input_shape, num_classes)
    except (jsonschema.ValidationError, json.JSONDecodeError) as exc:
        _print_schema_error(args.experiment, exc)
        return EXIT_USAGE
    except (ConfigError, ParseError, FileNotFoundError, ValueError) as exc:
        print(f"params: {exc}", file=sys.stderr)
        return EXIT_USAGE

    any_outside = False
    described = []
    for cfg, flag in zip(configs, fit_flags):
        try:
            final = fit_budget(cfg) if flag else cfg
        except BudgetError as exc:
            print(f"{cfg.display_name}: BUDGET INFEASIBLE ({exc})")
            any_outside = True
            continue
        desc = plan_model(final)
        low = cfg.budget * (1 - cfg.budget_tol)
        high = cfg.budget * (1 + cfg.budget_tol)
        within = low <= desc.total_params <= high
        any_outside |= not within
        flag_text = "" if within else f"  ** outside budget {cfg.budget} +/- {cfg.budget_tol:.1%}"
        print(f"== {cfg.display_name}  (total {desc.total_params}){flag_text}")
        print(desc.to_text())
        print()
        entry = desc.to_dict()
        entry["model"] = cfg.display_name
        entry["within_budget"] = within
        described.append(entry)
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(described, indent=2) + "\n")
    return EXIT_BUDGET if any_outside else EXIT_OK


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


_TRANSFORM_KINDS = {
    "matrix-transform-dct": TransformKind.DCT2,
    "matrix-transform-idct": TransformKind.DCT3_INVERSE,
    "matrix-transform-dft": TransformKind.DFT_FORWARD,
    "matrix-transform-idft": TransformKind.DFT_INVERSE,
    "matrix-transform-rnd": TransformKind.RANDOM_NORMALIZED,
}


def _gradcheck_target(kind: str, shape: tuple[int, ...], seed: int):
    """Build (layer, input, epsilon) for one gradcheck kind; None if unknown."""
    rng = np.random.default_rng(seed)
    if kind == "conv":
        if len(shape) != 4:
            raise ValueError("conv expects a BxCxHxW shape")
        spec = ConvSpec(shape[1], 3, 3, 3, stride=1, padding=1)
        return Conv2d(spec, rng), rng.standard_normal(shape), 1e-6
    if kind == "leaky-relu":
        x = rng.standard_normal(shape)
        x = np.where(np.abs(x) < 1e-2, 0.5, x)
        # piecewise linear: the wide step avoids cancellation noise and is exact
        return LeakyRelu(), x, 1e-4
    if kind == "gap":
        if len(shape) != 4:
            raise ValueError("gap expects a BxCxHxW shape")
        return GlobalAvgPool(), rng.standard_normal(shape), 1e-6
    if kind == "dense":
        if len(shape) != 2:
            raise ValueError("dense expects a BxF shape")
        return Dense(DenseSpec(shape[1], 3), rng), rng.standard_normal(shape), 1e-6
    if kind in _TRANSFORM_KINDS:
        tkind = _TRANSFORM_KINDS[kind]
        if len(shape) == 2:
            shape = (1, 2, shape[0], shape[1])
        if len(shape) != 4:
            raise ValueError("matrix transforms expect HxW or BxCxHxW shapes")
        paired = tkind is TransformKind.DFT_INVERSE and shape[1] % 2 == 0
        layer = MatrixTransform(
            tkind, shape[2], shape[3], rng=rng, paired_input=paired
        )
        return layer, rng.standard_normal(shape), 1e-6
    return None


def _cmd_gradcheck(args) -> int:
    try:
        target = _gradcheck_target(args.kind, args.shape, args.seed)
    except ValueError as exc:
        print(f"gradcheck: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if target is None:
        print(f"gradcheck: unknown layer kind {args.kind!r}", file=sys.stderr)
        return EXIT_USAGE
    layer, x, epsilon = target
    err = finite_difference_check(layer, x, epsilon)
    status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
    print(f"{args.kind} shape={'x'.join(map(str, args.shape))} max_rel_err={err:.3e} {status}")
    return EXIT_OK if err < GRADCHECK_TOLERANCE else EXIT_GRADCHECK


def _print_schema_error(path, exc) -> None:
    if isinstance(exc, jsonschema.ValidationError):
        location = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        print(f"{path}: schema violation at {location}: {exc.message}", file=sys.stderr)
    else:
        print(f"{path}: invalid JSON: {exc}", file=sys.stderr)


def _cmd_train(args) -> int:
    try:
        spec = load_experiment(args.experiment)
    except (jsonschema.ValidationError, json.JSONDecodeError) as exc:
        _print_schema_error(args.experiment, exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"train: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        outcome = run_experiment(
            spec, Path(args.experiment).parent, workers=args.workers
        )
    except (ConfigError, ParseError, SplitError, FileNotFoundError, ValueError) as exc:
        print(f"train: {exc}", file=sys.stderr)
        return EXIT_USAGE
    diverged = [r for r in outcome.results if r.diverged]
    for res in diverged:
        print(
            f"warning: diverged at epoch {res.diverged_epoch}: "
            f"model={res.spec.config.display_name} lr={res.spec.train_config.learning_rate} "
            f"l2={res.spec.train_config.l2_lambda} seed={res.spec.train_config.seed}",
            file=sys.stderr,
        )
    print(f"wrote {len(outcome.written)} files to {outcome.out_dir}")
    for s in outcome.summaries:
        print(
            f"{s.model}: acc {s.mean_acc:.4f} +/- {s.std_acc:.4f} "
            f"(lr={s.lr}, l2={s.l2}, epochs-to-theta median {s.epochs_to_theta_median})"
        )
    if outcome.all_diverged:
        print("train: every run diverged", file=sys.stderr)
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def _cmd_export_weights(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except (ParseError, FileNotFoundError) as exc:
        print(f"export-weights: {exc}", file=sys.stderr)
        return EXIT_USAGE
    prefix = f"{args.layer_index:02d}."
    keys = sorted(k for k in state if k.startswith(prefix))
    if not keys:
        print(f"export-weights: no layer {args.layer_index} in checkpoint", file=sys.stderr)
        return EXIT_USAGE
    layer_name = keys[0].split(".")[1]
    if not layer_name.startswith("transform"):
        print(
            f"export-weights: layer {args.layer_index} is {layer_name!r}, "
            "not a matrix transform",
            file=sys.stderr,
        )
        return EXIT_USAGE
    w1 = state[f"{prefix}{layer_name}.p0"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = f"layer{args.layer_index}_{layer_name}_w1"
    save_matrix_csv(out_dir / f"{base}.csv", w1)
    save_pgm(out_dir / f"{base}.pgm", w1)
    written = [f"{base}.csv", f"{base}.pgm"]
    if args.diff_against:
        try:
            other = load_checkpoint(args.diff_against)
        except (ParseError, FileNotFoundError) as exc:
            print(f"export-weights: {exc}", file=sys.stderr)
            return EXIT_USAGE
        key = f"{prefix}{layer_name}.p0"
        if key not in other:
            print(f"export-weights: {key} missing from {args.diff_against}", file=sys.stderr)
            return EXIT_USAGE
        try:
            diff = normalized_difference(other[key], w1)
        except ValueError as exc:
            print(f"export-weights: {exc}", file=sys.stderr)
            return EXIT_USAGE
        save_matrix_csv(out_dir / f"{base}_normdiff.csv", diff)
        written.append(f"{base}_normdiff.csv")
    for name in written:
        print(out_dir / name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectralnn",
        description="Trainable spectral matrix transforms: matrices, audits, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-matrix", help="write transform matrices as CSV")
    p.add_argument(
        "kind", choices=["dct2", "dct3-inverse", "dft", "idft", "random"]
    )
    p.add_argument("k", type=int)
    p.add_argument("n", type=int)
    p.add_argument("l", type=int, nargs="?", default=None)
    p.add_argument("m", type=int, nargs="?", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int, default=0, help="seed for the random kind")
    p.set_defaults(func=_cmd_init_matrix)

    p = sub.add_parser("params", help="audit model parameter counts against budgets")
    p.add_argument("experiment")
    p.add_argument("--json-out", default=None, help="also write layer tables as JSON")
    p.set_defaults(func=_cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference check one layer kind")
    p.add_argument(
        "kind",
        help="conv | leaky-relu | gap | dense | matrix-transform-{dct,idct,dft,idft,rnd}",
    )
    p.add_argument("shape", type=_parse_shape, help="e.g. 6x6 or 1x2x5x5")
    p.add_argument("seed", type=int, nargs="?", default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train", help="run an experiment file")
    p.add_argument("experiment")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("export-weights", help="dump a transform layer's W1")
    p.add_argument("checkpoint")
    p.add_argument("layer_index", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--diff-against", default=None, help="earlier checkpoint for a normalized difference")
    p.set_defaults(func=_cmd_export_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
