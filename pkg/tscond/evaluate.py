"""Evaluation protocol: train fresh forecasters and score them on the test split."""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from .data import SplitDataset, SyntheticSeries, TimeSeries, WindowSpec, window_arrays
from .exceptions import TrainingFailed, TSCondError
from .forecaster import (
    Arch,
    Forecaster,
    Optimizer,
    PairsLike,
    TrainConfig,
    init_params,
    train,
)
from .utils import PathLike, derive_seed, write_csv

logger = logging.getLogger(__name__)

#: Test models on a synthetic series: full-batch Adam for 1000 steps.
SYNTHETIC_TRAIN_CONFIG = TrainConfig(Optimizer.ADAM, 0.005, 1000, None)

#: Models on the full train split use the expert schedule.
FULL_TRAIN_CONFIG = TrainConfig(Optimizer.ADAM, 0.005, 5, 32)

#: Preferred order of the comparison rows.
METHOD_ORDER = ("Random", "MTT", "MTT+CondTSF", "Full")


class TrialResult(NamedTuple):
    trial: int
    seed: int
    mae: float
    mse: float


class Summary(NamedTuple):
    method: str
    mean_mae: float
    std_mae: float
    mean_mse: float
    std_mse: float
    trials: int


@dataclass(frozen=True)
class EvalReport:
    """Per-trial metrics of one synthetic series (or of the full train split)."""

    trials: Tuple[TrialResult, ...]
    arch: Arch
    dataset: str = ""
    origin: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        if not self.trials:
            raise ValueError("an evaluation report needs at least one trial")

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.trials], dtype=np.float64)

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self._column("mae")))

    @property
    def std_mae(self) -> float:
        return float(np.std(self._column("mae")))

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self._column("mse")))

    @property
    def std_mse(self) -> float:
        return float(np.std(self._column("mse")))

    def summary(self, method: Optional[str] = None) -> Summary:
        return summarize(self.trials, method or self.origin)

    def to_csv(self, path: PathLike):
        """``trial,seed,mae,mse`` rows followed by mean and std rows."""
        rows: List[list] = [[t.trial, t.seed, t.mae, t.mse] for t in self.trials]
        rows.append(["mean", "", self.mean_mae, self.mean_mse])
        rows.append(["std", "", self.std_mae, self.std_mse])
        write_csv(path, ("trial", "seed", "mae", "mse"), rows)


def summarize(trials: Sequence[TrialResult], method: str) -> Summary:
    mae = np.array([t.mae for t in trials], dtype=np.float64)
    mse = np.array([t.mse for t in trials], dtype=np.float64)
    return Summary(
        method,
        float(mae.mean()),
        float(mae.std()),
        float(mse.mean()),
        float(mse.std()),
        len(trials),
    )


def read_report_csv(path: PathLike) -> List[TrialResult]:
    """Per-trial rows of a report written by :meth:`EvalReport.to_csv`."""
    trials = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            if not row["trial"].isdigit():
                continue
            trials.append(
                TrialResult(
                    int(row["trial"]), int(row["seed"]), float(row["mae"]), float(row["mse"])
                )
            )
    return trials


def test_error(model: Forecaster, test: TimeSeries, spec: Optional[WindowSpec] = None):
    """MAE and MSE over every stride-1 test window, horizon step and channel."""
    spec = (spec or model.spec).with_stride(1)
    inputs, targets = window_arrays(test, spec)
    with torch.no_grad():
        diff = model(inputs).numpy() - targets
    return float(np.mean(np.abs(diff))), float(np.mean(diff**2))


def _run_trials(
    pairs: PairsLike,
    split: SplitDataset,
    arch: Arch,
    spec: WindowSpec,
    trials: int,
    cfg: TrainConfig,
    master_seed: int,
    kernel: int,
    hidden: int,
    workers: int,
) -> List[TrialResult]:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    def run(trial: int) -> TrialResult:
        seed = derive_seed(master_seed, trial)
        model = init_params(arch, spec, seed, kernel, hidden)
        try:
            trained = train(model, pairs, cfg.with_seed(seed))
        except TSCondError as e:
            raise TrainingFailed("trial", trial, e)
        mae, mse = test_error(trained, split.test, spec)
        logger.debug("trial %d: MAE %.5g MSE %.5g", trial, mae, mse)
        return TrialResult(trial, seed, mae, mse)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run, range(trials)))
    return [run(t) for t in range(trials)]


def evaluate_synthetic(
    s: SyntheticSeries,
    split: SplitDataset,
    arch: Arch = Arch.LINEAR,
    spec: Optional[WindowSpec] = None,
    trials: int = 5,
    cfg: Optional[TrainConfig] = None,
    master_seed: int = 0,
    kernel: int = 25,
    hidden: int = 64,
    workers: int = 1,
) -> EvalReport:
    """Train `trials` fresh models on the stride-1 windows of `s` and test them."""
    spec = (spec or WindowSpec()).with_stride(1)
    pairs = window_arrays(s, spec)
    results = _run_trials(
        pairs,
        split,
        Arch(arch),
        spec,
        trials,
        cfg or SYNTHETIC_TRAIN_CONFIG,
        master_seed,
        kernel,
        hidden,
        workers,
    )
    report = EvalReport(tuple(results), Arch(arch), split.train.source_id, s.origin.value)
    logger.info(
        "%s on %s synthetic: MAE %.4f±%.4f MSE %.4f±%.4f",
        report.arch.value,
        report.origin,
        report.mean_mae,
        report.std_mae,
        report.mean_mse,
        report.std_mse,
    )
    return report


def evaluate_full(
    split: SplitDataset,
    arch: Arch = Arch.LINEAR,
    spec: Optional[WindowSpec] = None,
    trials: int = 5,
    cfg: Optional[TrainConfig] = None,
    master_seed: int = 0,
    kernel: int = 25,
    hidden: int = 64,
    workers: int = 1,
) -> EvalReport:
    """The full-data reference: the same protocol trained on the whole train split."""
    spec = (spec or WindowSpec()).with_stride(1)
    pairs = window_arrays(split.train, spec)
    results = _run_trials(
        pairs,
        split,
        Arch(arch),
        spec,
        trials,
        cfg or FULL_TRAIN_CONFIG,
        master_seed,
        kernel,
        hidden,
        workers,
    )
    report = EvalReport(tuple(results), Arch(arch), split.train.source_id, "full")
    logger.info("%s on full train split: MAE %.4f MSE %.4f", arch, report.mean_mae, report.mean_mse)
    return report


def reduction(before: float, after: float) -> float:
    """Percentage decrease from `before` to `after`."""
    if before == 0:
        return 0.0
    return 100.0 * (before - after) / before


def order_summaries(summaries: Sequence[Summary]) -> List[Summary]:
    def key(item: Tuple[int, Summary]):
        index, summary = item
        if summary.method in METHOD_ORDER:
            return (METHOD_ORDER.index(summary.method), index)
        return (len(METHOD_ORDER), index)

    return [s for _, s in sorted(enumerate(summaries), key=key)]


def format_table(summaries: Sequence[Summary]) -> str:
    """A plain-text comparison table with a reduction row for CondTSF."""
    rows = order_summaries(summaries)
    width = max([len("method")] + [len(s.method) for s in rows])
    lines = [f"{'method':<{width}}  {'MAE':>17}  {'MSE':>17}"]
    for s in rows:
        lines.append(
            f"{s.method:<{width}}  {s.mean_mae:>8.3f}±{s.std_mae:<8.3f}  "
            f"{s.mean_mse:>8.3f}±{s.std_mse:<8.3f}"
        )

    by_method = {s.method: s for s in rows}
    if "MTT" in by_method and "MTT+CondTSF" in by_method:
        base, plugged = by_method["MTT"], by_method["MTT+CondTSF"]
        mae = reduction(base.mean_mae, plugged.mean_mae)
        mse = reduction(base.mean_mse, plugged.mean_mse)
        lines.append(f"{'↓ CondTSF':<{width}}  {mae:>16.1f}%  {mse:>16.1f}%")
    return "\n".join(lines)
