"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 property or bound
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import data, hessian, io, landscape, nn, train, verify

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VIOLATION = 0, 1, 2, 3
BOUND_SLACK = 1e-9
IDENTITY_TOL = 1e-10


class UsageError(Exception):
    pass


class Violation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got {text!r}") from None
    return a, b


def load_dataset(spec: str, limit: int | None = None, classes: int = 10, data_seed: int = 0):
    """Parse ``idx:<img>,<lbl>``, ``table:<path>`` or ``blobs:<m>,<n>,<K>,<spread>``.

    Returns the dataset and a fingerprint dict for the manifest.
    """
    kind, _, rest = spec.partition(":")
    if kind == "idx":
        parts = rest.split(",")
        if len(parts) != 2:
            raise UsageError("idx dataset needs idx:<images>,<labels>")
        paths = [data.resolve_path(p) for p in parts]
        ds = data.load_idx(paths[0], paths[1], limit=limit, num_classes=classes)
        fp = io.file_fingerprint(paths)
    elif kind == "table":
        path = data.resolve_path(rest)
        ds = data.load_feature_table(path, classes)
        if limit is not None:
            ds = ds.head(min(limit, ds.m))
        fp = io.file_fingerprint([path])
    elif kind == "blobs":
        try:
            m, n, K = (int(v) for v in rest.split(",")[:3])
            spread = float(rest.split(",")[3])
        except (ValueError, IndexError):
            raise UsageError("blobs dataset needs blobs:<m>,<n>,<K>,<spread>") from None
        ds = data.synthetic_blobs(m, n, K, spread, data_seed)
        if limit is not None:
            ds = ds.head(min(limit, ds.m))
        raw = ds.features.tobytes() + ds.labels.tobytes()
        fp = {"length": len(raw), "sha256": ds.fingerprint()}
    else:
        raise UsageError(f"unknown dataset kind {kind!r}; use idx:, table: or blobs:")
    fp["spec"] = spec
    fp["m"], fp["n"], fp["K"] = ds.m, ds.n, ds.K
    return ds, fp


def _check_compatible(params: nn.MlpParams, ds: data.Dataset) -> None:
    c = params.config
    if c.input_dim != ds.n or c.num_classes != ds.K:
        raise data.DataError(f"model is {c.input_dim}->{c.num_classes} but dataset is {ds.n}->{ds.K}")


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def cmd_train(args) -> int:
    start = time.perf_counter()
    ds, fp = load_dataset(args.dataset, args.limit, args.classes, args.data_seed)
    config = nn.MlpConfig(ds.n, args.hidden, args.layers, ds.K, bias=not args.no_bias)
    tconf = train.TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed)
    params, report = train.train(config, tconf, ds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_params(params, out / "params.bin")
    io.write_csv(
        out / "train_report.csv",
        ["epoch", "loss", "accuracy"],
        [(e + 1, l, a) for e, (l, a) in enumerate(zip(report.epoch_losses, report.epoch_accuracies))],
        comments=[
            f"initial_loss={io.fmt(report.initial_loss)}",
            f"final_loss={io.fmt(report.final_loss)}",
            f"final_accuracy={io.fmt(report.final_accuracy)}",
            f"gradient_norm={io.fmt(report.gradient_norm)}",
        ],
    )
    parameters = {"model": dataclasses.asdict(config), "train": dataclasses.asdict(tconf)}
    io.write_manifest(out / "manifest.json", "train", parameters, args.seed, fp, time.perf_counter() - start)
    print(f"trained {config.num_params} parameters: loss {report.initial_loss:.6g} -> {report.final_loss:.6g}, "
          f"accuracy {report.final_accuracy:.4f}, |grad| {report.gradient_norm:.3e}")
    return EXIT_OK


def cmd_converge(args) -> int:
    start = time.perf_counter()
    params = io.load_params(args.params)
    ds, fp = load_dataset(args.dataset, args.limit, args.classes, args.data_seed)
    _check_compatible(params, ds)
    if ds.m < 2:
        raise data.DataError("need at least two objects")

    curve = landscape.averaged_curve(params, ds, reps=args.reps, alpha=args.ema, seed=args.seed)
    consts = hessian.measure_constants(params, ds)
    bound = landscape.lemma2_bound(curve.k, consts, 0.0)

    k_min, k_max = args.slope_window or (max(1, ds.m // 10), ds.m - 1)
    try:
        slope = landscape.slope_fit(curve, k_min, k_max)
    except ValueError as exc:
        print(f"slope not fitted: {exc}", file=sys.stderr)
        slope = float("nan")

    out = Path(args.out)
    io.write_csv(
        out,
        ["k", "mean_abs_diff", "ema", "lemma2_bound_R0"],
        zip(curve.k, curve.mean_abs_diff, curve.ema, bound),
        trailer=[f"slope={io.fmt(slope)},k_min={k_min},k_max={k_max},reps={args.reps},"
                 f"m_loss={io.fmt(consts.m_loss)},max_identity_residual={io.fmt(curve.max_identity_residual)}"],
    )
    parameters = {"params": str(args.params), "reps": args.reps, "ema": args.ema, "slope_window": [k_min, k_max]}
    io.write_manifest(_manifest_path(out), "converge", parameters, args.seed, fp, time.perf_counter() - start)
    print(f"fitted slope {slope:.4f} on k in [{k_min}, {k_max}]")

    if curve.max_identity_residual > IDENTITY_TOL:
        raise Violation(f"loss-difference identity residual {curve.max_identity_residual:.3e} > {IDENTITY_TOL}")
    over = np.flatnonzero(curve.mean_abs_diff > bound)
    if over.size:
        i = over[0]
        raise Violation(f"k={curve.k[i]}: mean_abs_diff {curve.mean_abs_diff[i]!r} > bound {bound[i]!r}")
    return EXIT_OK


def bound_rows(params: nn.MlpParams, ds: data.Dataset, consts: hessian.BoundConstants):
    """Per-object ``(index, ||H_i||, layerwise, theorem1, lemma1)`` rows."""
    norms = hessian.layer_norms(params)
    theorem1 = consts.m_h
    lemma1 = hessian.lemma1_bound(consts.m_x, consts.h, consts.m_elem, consts.L)
    for i, (x, y) in enumerate(zip(ds.features, ds.labels)):
        trace = nn.forward(params, x, y)
        gn = hessian.assemble_factor(hessian.jacobian_chain(params, trace), trace, params.config)
        yield i, hessian.gn_spectral_norm(gn), hessian.layerwise_bound(params, trace, norms), theorem1, lemma1


def chain_violation(row, lemma1_applies: bool, slack: float = BOUND_SLACK) -> str | None:
    _, gn, lw, th, lem = row
    if gn > lw * (1 + slack):
        return "gn_spectral_norm > layerwise_bound"
    if lw > th * (1 + slack):
        return "layerwise_bound > theorem1_bound"
    if lemma1_applies and th > lem * (1 + slack):
        return "theorem1_bound > lemma1_bound"
    return None


def cmd_bound_check(args) -> int:
    start = time.perf_counter()
    ds, fp = load_dataset(args.dataset, args.limit, args.classes, args.data_seed)
    if args.params:
        params = io.load_params(args.params)
    else:
        if args.hidden is None or args.layers is None:
            raise UsageError("without --params, give --hidden and --layers for a random bias-free net")
        params = nn.init_params(nn.MlpConfig(ds.n, args.hidden, args.layers, ds.K, bias=False), args.seed)
    if params.config.bias:
        raise data.DataError(
            "bound check refused: the Hessian bound holds for networks without bias terms; "
            "retrain with --no-bias"
        )
    _check_compatible(params, ds)

    consts = hessian.measure_constants(params, ds)
    rows = list(bound_rows(params, ds, consts))
    out = Path(args.out)
    comments = [f"{k}={io.fmt(v)}" for k, v in dataclasses.asdict(consts).items()]
    comments.append(f"lemma1_hypothesis={int(consts.lemma1_hypothesis)}")
    io.write_csv(out, ["index", "gn_spectral_norm", "layerwise_bound", "theorem1_bound", "lemma1_bound"], rows,
                 comments=comments)
    parameters = {"params": str(args.params) if args.params else None, "hidden": args.hidden, "layers": args.layers}
    io.write_manifest(_manifest_path(out), "bound-check", parameters, args.seed, fp, time.perf_counter() - start)

    for row in rows:
        problem = chain_violation(row, consts.lemma1_hypothesis)
        if problem:
            raise Violation(f"object {row[0]}: {problem}: " + ",".join(io.fmt(v) for v in row))
    print(f"bound chain holds on {len(rows)} objects (max ||H_i|| = {max(r[1] for r in rows):.6g}, "
          f"theorem1 = {consts.m_h:.6g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    failed = False
    lines = []
    for seed in range(args.seed, args.seed + args.seeds):
        for result in verify.run_all(seed):
            line = f"seed={seed} {result.line()}"
            lines.append(line)
            print(line)
            failed |= not result.passed
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_taylor(args) -> int:
    start = time.perf_counter()
    params = io.load_params(args.params)
    ds, fp = load_dataset(args.dataset, args.limit, args.classes, args.data_seed)
    _check_compatible(params, ds)
    k = args.k or ds.m
    rows = []
    base = grad_norm = None
    for radius in args.radius:
        report = landscape.taylor_check(params, ds, k, radius, args.probes, args.seed)
        base, grad_norm = report.base_loss, report.gradient_norm
        for j in range(report.probes):
            rows.append((radius, j, report.true_loss[j], report.model_loss[j], report.errors[j],
                         report.gradient_term[j]))
        print(f"R={radius:g}: max |true - model| = {report.max_abs_model_error:.3e}")
    out = Path(args.out)
    io.write_csv(out, ["radius", "probe", "true_loss", "model_loss", "abs_error", "gradient_term"], rows,
                 comments=[f"k={k}", f"base_loss={io.fmt(base)}", f"gradient_norm={io.fmt(grad_norm)}"])
    parameters = {"params": str(args.params), "k": k, "radius": args.radius, "probes": args.probes}
    io.write_manifest(_manifest_path(out), "taylor", parameters, args.seed, fp, time.perf_counter() - start)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="landscape-hessian", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_flags(p, required=True):
        p.add_argument("--dataset", required=required,
                       help="idx:<images>,<labels> | table:<path> | blobs:<m>,<n>,<K>,<spread>")
        p.add_argument("--limit", type=int, default=None, help="keep only the first N objects")
        p.add_argument("--classes", type=int, default=10, help="number of classes for idx/table data")
        p.add_argument("--data-seed", type=int, default=0, help="seed for synthetic blobs")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a classifier with Adam")
    dataset_flags(p)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("converge", help="permutation-averaged loss differences")
    dataset_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--ema", type=float, default=0.99)
    p.add_argument("--slope-window", type=_int_pair, default=None, help="k_min,k_max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("bound-check", help="Hessian norm against its bounds, per object")
    dataset_flags(p)
    p.add_argument("--params", default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("verify", help="run the numerical oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("taylor", help="quadratic model error around trained parameters")
    dataset_flags(p)
    p.add_argument("--params", required=True)
    p.add_argument("--radius", type=_float_list, required=True, help="comma-separated radii")
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--k", type=int, default=None, help="objects in the loss (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_taylor)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Violation as exc:
        print(f"violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (data.DataError, io.ParamsFormatError, train.TrainingDivergedError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
