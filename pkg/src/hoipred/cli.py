"""Command-line pipeline: split, graph, train, eval, synth, plot.

Every command reads an optional config file and applies explicit flags on
top. Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .evaluation import (
    EvalProtocol,
    evaluate,
    format_metrics_rows,
    format_ranked_rows,
)
from .graph import (
    build_incidence,
    clique_expand,
    graph_stats,
    normalize_adjacency,
    write_edge_list,
)
from .model import load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .tensors import (
    CooFormatError,
    SparseTensor,
    TensorShape,
    load_coo,
    merge,
    save_coo,
    split,
    synth_planted,
)
from .training import (
    LR_GRID,
    WD_GRID,
    NonFiniteGradientError,
    NonFiniteLossError,
    format_epoch_line,
    train,
)

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _merged_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    for name in ("input", "output_dir", "seed", "ratios", "include_valid"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    train_overrides = {
        "epochs": "epochs",
        "batch_size": "batch_size",
        "learning_rate": "learning_rate",
        "weight_decay": "weight_decay",
        "negatives_per_positive": "negatives_per_positive",
        "rank": "rank",
        "n_layers": "layers",
        "fusion": "fusion",
        "predictor": "predictor",
        "feature_transform": "feature_transform",
        "nonlinearity": "nonlinearity",
        "valid_every": "valid_every",
        "valid_k": "valid_k",
    }
    updates = {}
    for field_name, arg_name in train_overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            updates[field_name] = value
    if updates:
        cfg.train = replace(cfg.train, **updates)
    for name, arg_name in (
        ("eval_kind", "kind"),
        ("eval_multiplier", "multiplier"),
        ("eval_ks", "k"),
        ("eval_runs", "runs"),
        ("eval_exclude_valid", "exclude_valid"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(cfg, name, tuple(value) if isinstance(value, list) else value)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_split(args) -> None:
    cfg = _merged_config(args)
    if not cfg.input:
        raise ValueError("split needs an input file (--input or config)")
    tensor = load_coo(cfg.input, index_base=args.index_base)
    ds = split(tensor, cfg.ratios, derive_seed(cfg.seed, "split"))
    out = _out_dir(cfg)
    for name, part in (("train", ds.train), ("valid", ds.valid), ("test", ds.test)):
        save_coo(part, out / f"{name}.coo")
    _write_json(
        out / "split_manifest.json",
        {
            "input": str(cfg.input),
            "shape": list(tensor.shape.dims),
            "ratios": list(cfg.ratios),
            "seed": cfg.seed,
            "counts": {
                "total": len(tensor),
                "train": len(ds.train),
                "valid": len(ds.valid),
                "test": len(ds.test),
            },
        },
    )
    print(
        f"split {len(tensor)} interactions into "
        f"{len(ds.train)}/{len(ds.valid)}/{len(ds.test)} at {out}"
    )


def _load_many(paths: list[str], index_base: int) -> SparseTensor:
    tensors = [load_coo(p, index_base=index_base) for p in paths]
    return tensors[0] if len(tensors) == 1 else merge(tensors)


def cmd_graph(args) -> None:
    cfg = _merged_config(args)
    paths = args.inputs or ([cfg.input] if cfg.input else [])
    if not paths:
        raise ValueError("graph needs at least one input file")
    t0 = time.perf_counter()
    tensor = _load_many(paths, args.index_base)
    incidence = build_incidence(tensor)
    incidence_seconds = time.perf_counter() - t0
    graph = clique_expand(incidence, tensor.shape)
    stats = graph_stats(graph)
    out = _out_dir(cfg)
    write_edge_list(graph, out / "edges.tsv")
    lines = [
        f"incidence\tnodes\t{incidence.n_rows}",
        f"incidence\tinteractions\t{incidence.n_cols}",
        f"incidence\tnnz\t{incidence.nnz}",
        f"incidence\tcsr_bytes\t{incidence.nbytes}",
        f"incidence\tbuild_seconds\t{incidence_seconds:.6f}",
    ]
    lines += [f"clique\t{key}\t{value}" for key, value in stats.rows()]
    (out / "graph_stats.tsv").write_text("\n".join(lines) + "\n")
    print(
        f"graph over {stats.node_count} nodes: {stats.undirected_edges} edges, "
        f"built in {stats.build_seconds * 1e3:.1f} ms"
    )


def cmd_synth(args) -> None:
    cfg = _merged_config(args)
    shape = TensorShape(tuple(args.dims))
    observed, holdout = synth_planted(
        shape,
        args.rank,
        args.n_obs,
        args.noise,
        derive_seed(cfg.seed, "synth"),
    )
    out = _out_dir(cfg)
    save_coo(observed, out / "observed.coo")
    save_coo(holdout, out / "holdout.coo")
    _write_json(
        out / "synth_manifest.json",
        {
            "shape": list(shape.dims),
            "rank": args.rank,
            "n_obs": args.n_obs,
            "noise_frac": args.noise,
            "seed": cfg.seed,
            "counts": {"observed": len(observed), "holdout": len(holdout)},
        },
    )
    print(f"wrote {len(observed)} observed / {len(holdout)} holdout cells to {out}")


def _build_adjacency(train_t: SparseTensor, valid_t: SparseTensor | None, include_valid: bool):
    base = (
        merge([train_t, valid_t])
        if include_valid and valid_t is not None and len(valid_t)
        else train_t
    )
    return normalize_adjacency(clique_expand(build_incidence(base), base.shape))


def _empty_like(shape: TensorShape) -> SparseTensor:
    return SparseTensor(shape, np.empty((0, shape.order), dtype=np.int64))


def cmd_train(args) -> None:
    from .tensors import DatasetSplit

    cfg = _merged_config(args)
    if not args.train:
        raise ValueError("train needs --train with the training interactions")
    train_t = load_coo(args.train, index_base=args.index_base)
    valid_t = (
        load_coo(args.valid, index_base=args.index_base) if args.valid else None
    )
    if valid_t is not None and valid_t.shape != train_t.shape:
        raise ValueError("train and valid tensor shapes differ")
    ds = DatasetSplit(
        train=train_t,
        valid=valid_t if valid_t is not None else _empty_like(train_t.shape),
        test=_empty_like(train_t.shape),
    )
    adj = _build_adjacency(train_t, valid_t, cfg.include_valid)
    out = _out_dir(cfg)
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train"))

    if args.grid:
        if valid_t is None or len(valid_t) == 0:
            raise ValueError("--grid needs a nonempty --valid for model selection")
        if tcfg.valid_every == 0:
            tcfg = replace(tcfg, valid_every=1)
        grid_dir = out / "grid"
        grid_dir.mkdir(exist_ok=True)
        best = None
        rows = []
        for lr, wd in itertools.product(LR_GRID, WD_GRID):
            run_cfg = replace(tcfg, learning_rate=lr, weight_decay=wd)
            result = train(ds, adj, run_cfg)
            tag = f"lr{lr:g}_wd{wd:g}"
            _write_epoch_log(grid_dir / f"{tag}.log", result.log)
            ap = result.best_valid_ap if result.best_valid_ap is not None else -1.0
            rows.append(f"{lr:g}\t{wd:g}\t{ap:.10g}\t{result.best_epoch}")
            if best is None or ap > best[0]:
                best = (ap, lr, wd, result)
        (out / "grid_results.tsv").write_text(
            "lr\twd\tbest_valid_ap\tbest_epoch\n" + "\n".join(rows) + "\n"
        )
        ap, lr, wd, result = best
        tcfg = replace(tcfg, learning_rate=lr, weight_decay=wd)
        print(f"grid best: lr={lr:g} wd={wd:g} valid_ap={ap:.6f}")
    elif args.resume:
        model, opt_state, extra = load_checkpoint(args.resume, adj)
        start = int(extra.get("epochs_done", 0))
        # --epochs is the total budget, so a resumed run trains the remainder
        remaining = tcfg.epochs - start
        if remaining <= 0:
            raise ValueError(
                f"checkpoint already covers {start} epoch(s); "
                f"raise --epochs above {start} to continue"
            )
        result = train(
            ds,
            adj,
            replace(tcfg, epochs=remaining),
            start_epoch=start,
            model=model,
            opt_state=opt_state,
        )
    else:
        result = train(ds, adj, tcfg)

    _write_epoch_log(out / "epochs.log", result.log)
    epochs_done = result.log[-1].epoch + 1 if result.log else 0
    save_checkpoint(
        out / "checkpoint.bin",
        result.model,
        opt_state=result.opt_state,
        extra={
            "epochs_done": epochs_done,
            "include_valid": cfg.include_valid,
            "root_seed": cfg.seed,
        },
    )
    _write_json(
        out / "train_manifest.json",
        {
            "epochs": len(result.log),
            "final_mean_loss": result.log[-1].mean_loss if result.log else None,
            "best_epoch": result.best_epoch,
            "best_valid_ap": result.best_valid_ap,
            "learning_rate": tcfg.learning_rate,
            "weight_decay": tcfg.weight_decay,
            "predictor": tcfg.predictor,
            "fusion": tcfg.fusion,
            "n_layers": tcfg.n_layers,
            "seed": cfg.seed,
        },
    )
    last = result.log[-1] if result.log else None
    print(
        f"trained {len(result.log)} epoch(s); "
        + (f"final mean loss {last.mean_loss:.6f}" if last else "no epochs run")
    )


def _write_epoch_log(path: Path, records) -> None:
    lines = ["epoch\tloss\tvalid_ap\twall_ms"]
    lines += [format_epoch_line(r) for r in records]
    path.write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> None:
    cfg = _merged_config(args)
    if not args.checkpoint or not args.train or not args.test:
        raise ValueError("eval needs --checkpoint, --train, and --test")
    train_t = load_coo(args.train, index_base=args.index_base)
    valid_t = load_coo(args.valid, index_base=args.index_base) if args.valid else None
    test_t = load_coo(args.test, index_base=args.index_base)
    model, _, extra = load_checkpoint(args.checkpoint)
    include_valid = bool(extra.get("include_valid", cfg.include_valid))
    model.attach_graph(_build_adjacency(train_t, valid_t, include_valid))
    excluded = [train_t]
    if cfg.eval_exclude_valid and valid_t is not None and len(valid_t):
        excluded.append(valid_t)
    protocol = EvalProtocol(
        kind=cfg.eval_kind,
        multiplier=cfg.eval_multiplier,
        ks=tuple(cfg.eval_ks),
        runs=cfg.eval_runs,
        exclude_valid=cfg.eval_exclude_valid,
    )
    out = _out_dir(cfg)
    scorer = model.scorer()
    per_run: dict[tuple[str, int], list[float]] = {}
    for run in range(protocol.runs):
        report = evaluate(
            scorer,
            test=test_t,
            excluded=excluded,
            protocol=protocol,
            seed=derive_seed(cfg.seed, f"eval/run{run}"),
        )
        (out / f"metrics_run{run}.tsv").write_text(
            "metric\tk\tvalue\tn_test\tn_candidates\n"
            + "\n".join(format_metrics_rows(report))
            + "\n"
        )
        if run == 0:
            header = (
                "rank\t"
                + "\t".join(f"i{n}" for n in range(test_t.shape.order))
                + "\tscore\tis_test"
            )
            (out / "ranked.tsv").write_text(
                header + "\n" + "\n".join(format_ranked_rows(report.ranked, test_t)) + "\n"
            )
        for row in report.rows:
            per_run.setdefault((row.metric, row.k), []).append(row.value)
    agg_lines = ["metric\tk\tmean\tstd\truns"]
    for (metric, k), values in sorted(per_run.items()):
        arr = np.asarray(values)
        agg_lines.append(
            f"{metric}\t{k}\t{arr.mean():.10g}\t{arr.std():.10g}\t{len(values)}"
        )
    (out / "metrics.tsv").write_text("\n".join(agg_lines) + "\n")
    for line in agg_lines[1:]:
        print(line.replace("\t", "  "))


def cmd_plot(args) -> None:
    cfg = _merged_config(args)
    out = _out_dir(cfg)
    wrote = []
    if args.epoch_log:
        lines = Path(args.epoch_log).read_text().splitlines()
        rows = ["epoch\tloss"]
        for line in lines[1:]:
            parts = line.split("\t")
            if len(parts) >= 2:
                rows.append(f"{parts[0]}\t{parts[1]}")
        (out / "loss_curve.tsv").write_text("\n".join(rows) + "\n")
        wrote.append("loss_curve.tsv")
    if args.metrics:
        lines = Path(args.metrics).read_text().splitlines()
        rows = ["k\tap_mean\tap_std"]
        for line in lines[1:]:
            parts = line.split("\t")
            if len(parts) >= 4 and parts[0] == "ap":
                rows.append(f"{parts[1]}\t{parts[2]}\t{parts[3]}")
        (out / "ap_vs_k.tsv").write_text("\n".join(rows) + "\n")
        wrote.append("ap_vs_k.tsv")
    if not wrote:
        raise ValueError("plot needs --epoch-log and/or --metrics")
    print(f"wrote {', '.join(wrote)} to {out}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value sections)")
    p.add_argument("--output-dir", dest="output_dir", help="directory for outputs")
    p.add_argument("--seed", type=int, help="root seed for all random streams")
    p.add_argument(
        "--index-base",
        type=int,
        default=0,
        choices=(0, 1),
        help="index base of input files (default 0)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hoipred", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="partition a tensor 3 ways")
    _add_common(p)
    p.add_argument("--input", help="observed interactions (COO text)")
    p.add_argument("--ratios", nargs=3, type=float, metavar=("TRAIN", "VALID", "TEST"))
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("graph", help="build the clique graph")
    _add_common(p)
    p.add_argument("--input", help="interaction file")
    p.add_argument(
        "--inputs", nargs="+", help="multiple interaction files merged as one"
    )
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("synth", help="generate planted data")
    _add_common(p)
    p.add_argument("--dims", nargs="+", type=int, required=True)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--n-obs", dest="n_obs", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a scoring model")
    _add_common(p)
    p.add_argument("--train", help="training interactions")
    p.add_argument("--valid", help="validation interactions")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument(
        "--negatives", dest="negatives_per_positive", type=int, default=None
    )
    p.add_argument("--rank", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--fusion", choices=("sum", "mean", "product", "concat"))
    p.add_argument("--predictor", choices=("cp", "tucker", "mlp", "conv"))
    p.add_argument(
        "--feature-transform", action=argparse.BooleanOptionalAction, default=None
    )
    p.add_argument(
        "--nonlinearity", action=argparse.BooleanOptionalAction, default=None
    )
    p.add_argument(
        "--include-valid",
        dest="include_valid",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="also wire validation interactions into the graph",
    )
    p.add_argument("--valid-every", dest="valid_every", type=int)
    p.add_argument("--valid-k", dest="valid_k", type=int)
    p.add_argument("--grid", action="store_true", help="sweep the lr x wd grids")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank and score a model")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--train", help="training interactions (excluded + graph)")
    p.add_argument("--valid", help="validation interactions")
    p.add_argument("--test", help="test interactions")
    p.add_argument("--kind", choices=("full", "sampled"))
    p.add_argument("--multiplier", type=int)
    p.add_argument("--k", nargs="+", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument(
        "--exclude-valid",
        dest="exclude_valid",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="exclude validation cells from candidates (default true)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="emit plot-ready TSV data")
    _add_common(p)
    p.add_argument("--epoch-log", dest="epoch_log", help="epoch log from train")
    p.add_argument("--metrics", help="aggregate metrics from eval")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (CooFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
