"""Command-line entry points: train, bench-spmm, stability, allocate.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
Every command writes CSV to ``--out`` (default stdout).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import statistics
import sys
import time
import typing
from collections import defaultdict

import numpy as np

from . import flops
from .allocator import LayerProfile, greedy_allocate
from .approx import approx_spmm_topk, pair_stats, relative_error, topk_indices
from .config import TrainConfig
from .data_io import DataError, generate_sbm, load_dataset, make_rng, write_metrics_csv
from .gnn_engine import TrainingError, train
from .sparse_core import csr_from_arrays, csr_select_columns, spmm

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline=""), True
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from exc


def _write_rows(path, header, rows) -> None:
    fh, close = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def median_ms(fn, repeats: int = 20, warmup: int = 3) -> float:
    """Median wall time of ``fn()`` in milliseconds on the monotonic clock."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return statistics.median(samples) / 1e6


# -- config handling --------------------------------------------------------


def _field_type(f: dataclasses.Field):
    hint = typing.get_type_hints(TrainConfig)[f.name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0] if args else hint


def add_config_flags(p: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field; unset flags stay out of the namespace."""
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag]
        if f.name == "budget_C":
            names = ["--budget-c", "--budget-C", "--budget"]
        typ = _field_type(f)
        if typ is bool:
            p.add_argument(
                *names, dest=f.name, action=argparse.BooleanOptionalAction,
                default=argparse.SUPPRESS,
            )
        else:
            p.add_argument(*names, dest=f.name, type=typ, default=argparse.SUPPRESS)


def config_from_args(args: argparse.Namespace, **forced) -> TrainConfig:
    # precedence: flags > JSON file > dataclass defaults
    flags = {f: getattr(args, f) for f in TrainConfig.field_names() if hasattr(args, f)}
    flags.update(forced)
    try:
        if args.config:
            return TrainConfig.from_json(args.config, **flags)
        return TrainConfig(**flags)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def dataset_for(config: TrainConfig):
    if config.edges:
        try:
            return load_dataset(config.edges, config.features, config.labels, config.masks)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load dataset: {exc}") from exc
    seed = config.seed if config.sbm_seed is None else config.sbm_seed
    try:
        return generate_sbm(
            config.sbm_nodes, config.sbm_classes, config.sbm_p_in, config.sbm_p_out,
            config.sbm_feat_dim, config.sbm_noise, seed,
        )
    except ValueError as exc:
        raise UsageError(f"bad SBM parameters: {exc}") from exc


# -- commands --------------------------------------------------------------


def cmd_train(config: TrainConfig, out=None, summary_stream=None):
    dataset = dataset_for(config)
    result = train(config, dataset)
    try:
        write_metrics_csv(result.history, out if out else "-")
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    s = result.summary()
    stream = summary_stream or (sys.stderr if out in (None, "-") else sys.stdout)
    print(
        f"test_acc_at_best_val={s['test_acc']:.4f} best_epoch={s['best_epoch']} "
        f"bwd_spmm_flops={s['bwd_spmm_flops']} flop_ratio={s['flop_ratio']:.4f} "
        f"approx_phase_flop_ratio={s['approx_phase_flop_ratio']:.4f} "
        f"wall_ms={s['wall_ms']:.1f}",
        file=stream,
    )
    return result


BENCH_COLUMNS = [
    "k_fraction", "k", "exact_ms", "approx_ms", "slice_ms",
    "exact_flops", "approx_flops", "flop_ratio", "rel_error",
]
BENCH_TIMING_COLUMNS = ("exact_ms", "approx_ms", "slice_ms")


def random_operator(n: int, density: float, rng: np.random.Generator):
    nnz = int(round(density * n * n))
    flat = rng.choice(n * n, size=nnz, replace=False)
    return csr_from_arrays(flat // n, flat % n, rng.standard_normal(nnz), (n, n))


def cmd_bench_spmm(n, density, d, k_fractions, trials=20, seed=0):
    """Time exact spmm against top-k sliced spmm at each k fraction.

    ``approx_ms`` covers selection, slicing and the sliced product;
    ``slice_ms`` is the slicing alone (what a cache hit saves).
    """
    if n < 1 or d < 1 or not 0 < density <= 1 or trials < 20:
        raise UsageError("need n, d >= 1, 0 < density <= 1, trials >= 20")
    if not k_fractions or any(not 0 < f <= 1 for f in k_fractions):
        raise UsageError("k fractions must lie in (0, 1]")
    rng = make_rng(seed, "bench")
    a = random_operator(n, density, rng)
    b = rng.standard_normal((n, d))
    exact_ms = median_ms(lambda: spmm(a, b), trials)
    with flops.count_flops() as fc:
        spmm(a, b)
    exact_flops = fc.total()
    stats = pair_stats(a, b)

    rows = []
    for frac in k_fractions:
        k = max(1, int(round(frac * n)))
        sel = topk_indices(stats, k)

        def run():
            s = topk_indices(pair_stats(a, b), k)
            return approx_spmm_topk(a, b, s)

        approx_ms = median_ms(run, trials)
        slice_ms = median_ms(lambda: csr_select_columns(a, sel.indices), trials)
        with flops.count_flops() as fc:
            approx = approx_spmm_topk(a, b, sel)
        approx_flops = fc.total()
        rows.append([
            frac, k, exact_ms, approx_ms, slice_ms, exact_flops, approx_flops,
            approx_flops / exact_flops if exact_flops else math.nan,
            relative_error(a, b, approx),
        ])
    return rows


STABILITY_COLUMNS = ["step", "ref_step", "layer", "k", "auc", "skipped"]


def cmd_stability(config: TrainConfig):
    """AUC of each layer's top-k set against the set ``stability_lag`` steps earlier.

    Caching is disabled so every step reselects from its own gradient. Rows
    with k = |V| have no defined AUC; they are kept with ``skipped=1``.
    """
    dataset = dataset_for(config)
    result = train(config, dataset)
    n = dataset.n_nodes
    lag = config.stability_lag
    rows = []
    for r in result.history:
        if not r["approx_active"]:
            continue
        for layer, k in sorted(r["k_per_layer"].items()):
            auc = r["auc_per_layer"].get(layer)
            if k >= n:
                rows.append([r["epoch"], r["epoch"] - lag, layer, k, None, 1])
            elif auc is not None:
                rows.append([r["epoch"], r["epoch"] - lag, layer, k, auc, 0])
    return rows


ALLOCATE_COLUMNS = ["layer_id", "k_l", "captured_mass", "flops", "status"]


def read_profile_csv(path) -> list[LayerProfile]:
    """Profiles from rows ``layer,pair_index,product,nnz,d[,frob_denominator]``."""
    need = {"layer", "pair_index", "product", "nnz", "d"}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise DataError(f"profile CSV needs columns {sorted(need)}")
            layers = defaultdict(list)
            for line, row in enumerate(reader, start=2):
                try:
                    layers[int(row["layer"])].append((
                        int(row["pair_index"]), float(row["product"]), int(row["nnz"]),
                        int(row["d"]), float(row.get("frob_denominator") or 1.0),
                    ))
                except (TypeError, ValueError) as exc:
                    raise DataError(f"line {line}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not layers:
        raise DataError("profile CSV has no rows")

    profiles = []
    for layer in sorted(layers):
        recs = sorted(layers[layer])
        idx = [r[0] for r in recs]
        if idx != list(range(len(recs))):
            raise DataError(f"layer {layer}: pair_index must cover 0..n-1 once each")
        ds = {r[3] for r in recs}
        dens = {r[4] for r in recs}
        if len(ds) != 1 or len(dens) != 1:
            raise DataError(f"layer {layer}: d and frob_denominator must be constant")
        products = np.array([r[1] for r in recs])
        nnz = np.array([r[2] for r in recs])
        if np.any(products < 0) or np.any(nnz < 0) or not np.all(np.isfinite(products)):
            raise DataError(f"layer {layer}: products and nnz must be non-negative")
        profiles.append(LayerProfile(layer, products, nnz, ds.pop(), dens.pop()))
    if len({p.n_pairs for p in profiles}) != 1:
        raise DataError("every layer must have the same number of pairs")
    return profiles


def cmd_allocate(profile_csv, C: float, alpha: float):
    try:
        profiles = read_profile_csv(profile_csv)
        plan = greedy_allocate(profiles, C, alpha, profiles[0].n_pairs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    status = "infeasible" if plan.infeasible else "ok"
    rows = []
    for p, k in zip(profiles, plan.k_per_layer):
        top = p.order[:k]
        rows.append([
            p.layer_id, k, float(p.weights[top].sum()),
            int(p.nnz_per_col[top].sum()) * p.d, status,
        ])
    return rows


# -- argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topkgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write per-epoch metrics")
    add_config_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("bench-spmm", help="time exact vs top-k sliced spmm")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--density", type=float, default=0.002)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--k-fractions", default="0.05,0.1,0.2,0.3,0.5,1.0")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("stability", help="per-layer top-k AUC across steps, caching off")
    add_config_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("allocate", help="run the greedy allocator on a recorded profile")
    p.add_argument("profile", help="CSV with layer,pair_index,product,nnz,d")
    p.add_argument("--budget-c", "--budget-C", "--budget", dest="budget_C", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.02)
    p.add_argument("--out", default="-")
    return parser


def _parse_fractions(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --k-fractions: {exc}") from exc


def run(args: argparse.Namespace) -> None:
    if args.command == "train":
        cmd_train(config_from_args(args), args.out)
    elif args.command == "bench-spmm":
        rows = cmd_bench_spmm(
            args.n, args.density, args.d, _parse_fractions(args.k_fractions),
            args.trials, args.seed,
        )
        _write_rows(args.out, BENCH_COLUMNS, [[_fmt(v) for v in r] for r in rows])
    elif args.command == "stability":
        config = config_from_args(args, cache_interval=1)
        if config.mode == "exact":
            raise UsageError("stability needs --mode rsc or uniform")
        rows = cmd_stability(config)
        _write_rows(args.out, STABILITY_COLUMNS, [[_fmt(v) for v in r] for r in rows])
    elif args.command == "allocate":
        rows = cmd_allocate(args.profile, args.budget_C, args.alpha)
        _write_rows(
            args.out, ALLOCATE_COLUMNS,
            [[_fmt(v) if not isinstance(v, str) else v for v in r] for r in rows],
        )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
