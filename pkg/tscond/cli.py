"""Command line entry point: ``tscond buffer|distill|eval|sweep|report``."""
import argparse
from concurrent.futures import ThreadPoolExecutor
import itertools
import logging
from pathlib import Path
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .buffer import ExpertBuffer, generate_buffer, load_buffer, save_buffer
from .condense import distill, random_baseline
from .data import (
    Origin,
    SplitDataset,
    SyntheticSeries,
    load_csv,
    load_synthetic_csv,
    save_synthetic_csv,
    split_normalize,
)
from .evaluate import (
    EvalReport,
    Summary,
    evaluate_full,
    evaluate_synthetic,
    format_table,
    read_report_csv,
    summarize,
)
from .exceptions import ConfigError, MissingArtifact, TSCondError
from .forecaster import Arch
from .settings import DEFAULTS, RunConfig, parse_config
from .utils import read_manifest, write_csv, write_manifest

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

SWEEP_HEADER = ("mean_mae", "mean_mse")
REPORT_HEADER = ("method", "mean_mae", "std_mae", "mean_mse", "std_mse")


def _require(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError([(what, "is required")])
    if not Path(path).exists():
        raise MissingArtifact(str(path))
    return Path(path)


def _dataset_name(cfg: RunConfig) -> str:
    return cfg.data.name or Path(cfg.data.path).stem


def _load_split(cfg: RunConfig) -> Tuple[SplitDataset, Tuple[str, ...]]:
    path = _require(cfg.data.path, "data.path")
    ts = load_csv(path, cfg.data.has_header, cfg.data.date_column)
    split = split_normalize(ts, cfg.data.split_ratio, cfg.window_spec(), cfg.data.strict)
    return split, ts.channel_names


def _evaluate(cfg: RunConfig, s: SyntheticSeries, split: SplitDataset) -> EvalReport:
    return evaluate_synthetic(
        s,
        split,
        Arch(cfg.eval.arch),
        cfg.window_spec(),
        cfg.eval.trials,
        cfg.eval_train_config(),
        cfg.eval.seed,
        cfg.data.kernel,
        cfg.eval.hidden,
        cfg.eval.workers,
    )


def _method_label(cfg: RunConfig) -> str:
    return "MTT+CondTSF" if cfg.condense.condtsf else "MTT"


def run_buffer(cfg: RunConfig, args) -> int:
    out = Path(cfg.buffer.out or "buffer.tscb")
    split, _ = _load_split(cfg)
    buf = generate_buffer(
        split.train,
        cfg.window_spec(),
        cfg.buffer.k,
        cfg.expert_train_config(),
        cfg.buffer.seed,
        Arch(cfg.buffer.arch),
        cfg.data.kernel,
        cfg.buffer.hidden,
        cfg.buffer.workers,
    )
    save_buffer(buf, out)
    write_manifest(out, "buffer", cfg.as_dict(), inputs=[cfg.data.path], outputs=[out])
    return 0


def _distill_into(
    cfg: RunConfig,
    buf: ExpertBuffer,
    split: SplitDataset,
    channel_names: Sequence[str],
    synthetic_out: Path,
    metrics_out: Path,
) -> SyntheticSeries:
    evaluator = None
    if cfg.condense.eval_every:

        def evaluator(s: SyntheticSeries):
            report = _evaluate(cfg, s, split)
            return report.mean_mae, report.mean_mse

    condense_cfg = cfg.condense_config(cfg.synthetic_length(_dataset_name(cfg)))
    synthetic, log = distill(buf, split.train, condense_cfg, evaluator)
    save_synthetic_csv(synthetic, synthetic_out, channel_names)
    log.to_csv(metrics_out)
    logger.info("wrote synthetic series to %s and metrics to %s", synthetic_out, metrics_out)
    return synthetic


def _metrics_path(cfg: RunConfig, synthetic_out: Path) -> Path:
    if cfg.condense.metrics:
        return Path(cfg.condense.metrics)
    return synthetic_out.with_name(synthetic_out.stem + ".metrics.csv")


def run_distill(cfg: RunConfig, args) -> int:
    buffer_path = _require(cfg.buffer.out, "buffer.out")
    split, names = _load_split(cfg)
    buf = load_buffer(buffer_path, split.train, strict=True)

    synthetic_out = Path(cfg.condense.out or "synthetic.csv")
    metrics_out = _metrics_path(cfg, synthetic_out)
    _distill_into(cfg, buf, split, names, synthetic_out, metrics_out)
    write_manifest(
        synthetic_out,
        "distill",
        cfg.as_dict(),
        inputs=[cfg.data.path, buffer_path],
        outputs=[synthetic_out, metrics_out],
        method=_method_label(cfg),
    )
    return 0


def run_eval(cfg: RunConfig, args) -> int:
    split, _ = _load_split(cfg)
    inputs = [cfg.data.path]
    if args.full:
        report = evaluate_full(
            split,
            Arch(cfg.eval.arch),
            cfg.window_spec(),
            cfg.eval.trials,
            cfg.full_train_config(),
            cfg.eval.seed,
            cfg.data.kernel,
            cfg.eval.hidden,
            cfg.eval.workers,
        )
        method = "Full"
    elif args.random:
        length = cfg.synthetic_length(_dataset_name(cfg))
        report = _evaluate(cfg, random_baseline(split.train, length, cfg.condense.seed), split)
        method = "Random"
    else:
        path = _require(args.synthetic, "--synthetic")
        s, _ = load_synthetic_csv(path, Origin.DISTILLED)
        report = _evaluate(cfg, s, split)
        inputs.append(path)
        manifest = read_manifest(path) or {}
        method = manifest.get("method", path.stem)

    method = args.label or method
    out = Path(args.out)
    report.to_csv(out)
    logger.info(
        "%s: MAE %.4f MSE %.4f, written to %s", method, report.mean_mae, report.mean_mse, out
    )
    write_manifest(out, "eval", cfg.as_dict(), inputs=inputs, outputs=[out], method=method)
    return 0


def parse_grid(text: str) -> List[Tuple[str, List[str]]]:
    """``"G=1,3,5;beta=0.01,0.05"`` as ``[("G", [...]), ("beta", [...])]``."""
    grid: List[Tuple[str, List[str]]] = []
    violations = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, values = part.partition("=")
        key = key.strip()
        name = key[len("condense.") :] if key.startswith("condense.") else key
        items = [v.strip() for v in values.split(",") if v.strip()]
        if not sep or not items:
            violations.append((part, "expected key=v1,v2,..."))
        elif name not in DEFAULTS["condense"]:
            violations.append((key, "not a condense setting"))
        else:
            grid.append((name, items))
    if not grid and not violations:
        violations.append(("--grid", "is empty"))
    if violations:
        raise ConfigError(violations)
    return grid


def run_sweep(cfg: RunConfig, args) -> int:
    grid = parse_grid(args.grid)
    cells = list(itertools.product(*(values for _, values in grid)))
    keys = [name for name, _ in grid]
    # Validate every cell before any work starts.
    cell_cfgs = [
        cfg.replace([f"condense.{k}={v}" for k, v in zip(keys, cell)]) for cell in cells
    ]

    buffer_path = _require(cfg.buffer.out, "buffer.out")
    split, names = _load_split(cfg)
    buf = load_buffer(buffer_path, split.train, strict=True)

    out = Path(args.out)
    cell_dir = Path(args.cell_dir) if args.cell_dir else out.with_name(out.stem + "_cells")
    logger.info("sweeping %d cells over %s", len(cells), ", ".join(keys))

    def run_cell(index: int) -> EvalReport:
        cell_cfg = cell_cfgs[index]
        tag = "_".join(f"{k}={v}" for k, v in zip(keys, cells[index]))
        synthetic_out = cell_dir / f"{tag}.synthetic.csv"
        metrics_out = cell_dir / f"{tag}.metrics.csv"
        s = _distill_into(cell_cfg, buf, split, names, synthetic_out, metrics_out)
        report = _evaluate(cell_cfg, s, split)
        report.to_csv(cell_dir / f"{tag}.eval.csv")
        return report

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as executor:
            reports = list(executor.map(run_cell, range(len(cells))))
    else:
        reports = [run_cell(i) for i in range(len(cells))]

    write_csv(
        out,
        (*keys, *SWEEP_HEADER),
        ([*cell, r.mean_mae, r.mean_mse] for cell, r in zip(cells, reports)),
    )
    logger.info("wrote %d sweep rows to %s", len(cells), out)
    write_manifest(
        out,
        "sweep",
        cfg.as_dict(),
        inputs=[cfg.data.path, buffer_path],
        outputs=[out],
        grid=dict(grid),
    )
    return 0


def _report_source(item: str) -> Tuple[Optional[str], Path]:
    label, sep, path = item.partition("=")
    if sep and not Path(item).exists():
        return label, Path(path)
    return None, Path(item)


def run_report(cfg: RunConfig, args) -> int:
    summaries: List[Summary] = []
    for item in args.reports:
        label, path = _report_source(item)
        if not path.exists():
            raise MissingArtifact(str(path))
        if label is None:
            label = (read_manifest(path) or {}).get("method", path.stem)
        summaries.append(summarize(read_report_csv(path), label))

    print(format_table(summaries))
    if args.out:
        write_csv(
            args.out,
            REPORT_HEADER,
            ([s.method, s.mean_mae, s.std_mae, s.mean_mse, s.std_mse] for s in summaries),
        )
        write_manifest(
            args.out,
            "report",
            cfg.as_dict(),
            inputs=[_report_source(i)[1] for i in args.reports],
            outputs=[args.out],
        )
    return 0


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "buffer": run_buffer,
    "distill": run_distill,
    "eval": run_eval,
    "sweep": run_sweep,
    "report": run_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tscond", description="Time-series dataset condensation with CondTSF"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    options = argparse.ArgumentParser(add_help=False)
    options.add_argument("--config", help="Run file (INI sections or a JSON manifest)")
    options.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    options.add_argument("-q", "--quiet", action="store_true", help="Only log warnings")

    common = argparse.ArgumentParser(add_help=False, parents=[options])
    common.add_argument(
        "overrides", nargs="*", metavar="section.key=value", help="Config overrides"
    )

    p_buf = sub.add_parser("buffer", parents=[common], help="Train the expert buffer")
    p_buf.add_argument("--data", help="Dataset CSV")
    p_buf.add_argument("--out", help="Buffer file to write")

    p_dis = sub.add_parser("distill", parents=[common], help="Condense the train split")
    p_dis.add_argument("--data", help="Dataset CSV")
    p_dis.add_argument("--buffer", help="Expert buffer file")
    p_dis.add_argument("--out-synthetic", help="Synthetic series CSV to write")
    p_dis.add_argument("--out-metrics", help="Per-epoch metrics CSV to write")

    p_eval = sub.add_parser("eval", parents=[common], help="Evaluate a synthetic series")
    p_eval.add_argument("--data", help="Dataset CSV")
    source = p_eval.add_mutually_exclusive_group(required=True)
    source.add_argument("--synthetic", help="Synthetic series CSV")
    source.add_argument("--random", action="store_true", help="Evaluate a random train segment")
    source.add_argument("--full", action="store_true", help="Evaluate the full train split")
    p_eval.add_argument("--out", required=True, help="Report CSV to write")
    p_eval.add_argument("--label", help="Method name shown by the report command")

    p_sweep = sub.add_parser("sweep", parents=[common], help="Distill and evaluate over a grid")
    p_sweep.add_argument("--data", help="Dataset CSV")
    p_sweep.add_argument("--buffer", help="Expert buffer file")
    p_sweep.add_argument("--grid", required=True, help='Grid such as "G=1,3,5;beta=0.01,0.05"')
    p_sweep.add_argument("--out", required=True, help="Combined results CSV")
    p_sweep.add_argument("--cell-dir", help="Directory for per-cell artifacts")
    p_sweep.add_argument("--workers", type=int, default=1, help="Cells run concurrently")

    p_rep = sub.add_parser("report", parents=[options], help="Compare evaluation reports")
    p_rep.add_argument("reports", nargs="+", metavar="[label=]report.csv")
    p_rep.add_argument("--out", help="Summary CSV to write")
    return parser


# (argument, config key) pairs applied before the positional overrides
_FLAG_KEYS = (
    ("data", "data.path"),
    ("out", "buffer.out"),
    ("buffer", "buffer.out"),
    ("out_synthetic", "condense.out"),
    ("out_metrics", "condense.metrics"),
)


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    overrides = []
    for attr, key in _FLAG_KEYS:
        if attr == "out" and args.command != "buffer":
            continue
        value = getattr(args, attr, None)
        if value:
            overrides.append(f"{key}={value}")
    return overrides


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT, level=level, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        cfg = parse_config(args.config, [*_flag_overrides(args), *getattr(args, "overrides", [])])
        return COMMANDS[args.command](cfg, args)
    except (TSCondError, FileNotFoundError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
